use atlas_core::calculus::{
    backward_integral, covariation, forward_integral, ito_integral, stratonovich_integral,
};
use atlas_core::paths::{build_grid, PathEnsemble};
use atlas_core::portfolio::{generated_weights, market_weights, GeneratingFunction, Generator};
use atlas_core::rank::{coincidence_stats, rank_permutation, ranked_ensemble};
use atlas_core::verification::{rank_reconstruction, verify_minmax, verify_rank_representation};
use proptest::prelude::*;

fn series(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn pair(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|m| (prop::collection::vec(-5.0f64..5.0, m), prop::collection::vec(-5.0f64..5.0, m)))
}

/// Several assets on one path, values drawn from a small lattice so ties happen.
fn lattice_paths() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 3usize..20).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::vec((-3i32..4).prop_map(|v| v as f64 * 0.5), m), n)
    })
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * scale.max(1.0)
}

proptest! {
    #[test]
    fn stratonovich_is_ito_plus_half_covariation((y, x) in pair(2..60)) {
        let s = stratonovich_integral(&y, &x).unwrap().values;
        let i = ito_integral(&y, &x).unwrap().values;
        let q = covariation(&x, &y, 1).unwrap().values;
        for m in 0..x.len() {
            prop_assert!(close(s[m], i[m] + 0.5 * q[m], i[m].abs() + q[m].abs()));
        }
    }

    #[test]
    fn backward_minus_forward_is_covariation((y, x) in pair(2..60)) {
        let f = forward_integral(&y, &x, 1).unwrap().values;
        let b = backward_integral(&y, &x, 1).unwrap().values;
        let q = covariation(&x, &y, 1).unwrap().values;
        for m in 0..x.len() {
            prop_assert!(close(b[m] - f[m], q[m], b[m].abs() + f[m].abs()));
        }
    }

    #[test]
    fn backward_is_reversed_forward((y, x) in pair(2..60), c in 1usize..8) {
        // backward on [0, T] equals minus forward of the reversed pair on [0, T]
        let ry: Vec<f64> = y.iter().rev().copied().collect();
        let rx: Vec<f64> = x.iter().rev().copied().collect();
        let b = backward_integral(&y, &x, c).unwrap().last();
        let f = forward_integral(&ry, &rx, c).unwrap().last();
        prop_assert!(close(b, -f, b.abs()));
    }

    #[test]
    fn integrals_are_bilinear((y, x) in pair(2..40), z in series(40..41), a in -3.0f64..3.0) {
        let z = &z[..x.len()];
        let combo: Vec<f64> = y.iter().zip(z).map(|(u, v)| a * u + v).collect();
        let lhs = stratonovich_integral(&combo, &x).unwrap().last();
        let rhs = a * stratonovich_integral(&y, &x).unwrap().last()
            + stratonovich_integral(z, &x).unwrap().last();
        prop_assert!(close(lhs, rhs, lhs.abs() + rhs.abs() + 10.0));
        let q1 = covariation(&x, &y, 1).unwrap().last();
        let q2 = covariation(&y, &x, 1).unwrap().last();
        prop_assert!(close(q1, q2, q1.abs()));
    }

    #[test]
    fn rank_permutation_inverts(values in prop::collection::vec((-4i32..5).prop_map(f64::from), 1..12)) {
        let (r, p) = rank_permutation(&values);
        for (i, &k) in r.iter().enumerate() {
            prop_assert_eq!(p[k], i);
        }
        for k in 1..values.len() {
            prop_assert!(values[p[k - 1]] >= values[p[k]]);
            if values[p[k - 1]] == values[p[k]] {
                prop_assert!(p[k - 1] < p[k]);
            }
        }
    }

    #[test]
    fn ranking_preserves_sums_and_coincidences(paths in lattice_paths()) {
        let m = paths[0].len() - 1;
        let ens = PathEnsemble::from_series(build_grid(1.0, m).unwrap(), &paths).unwrap();
        let (ranked, frames) = ranked_ensemble(&ens);
        let n = paths.len();
        let mut coincident = 0;
        let mut ranked_coincident = 0;
        for t in 0..=m {
            let by_name: f64 = (0..n).map(|i| paths[i][t]).sum();
            let by_rank: f64 = (0..n).map(|k| ranked.value(0, k, t)).sum();
            prop_assert!(close(by_name, by_rank, by_name.abs()));
            for k in 0..n {
                prop_assert_eq!(ranked.value(0, k, t), paths[frames.asset_at(0, t, k)][t]);
                prop_assert_eq!(frames.rank_of(0, t, frames.asset_at(0, t, k)), k);
                if k > 0 {
                    prop_assert!(ranked.value(0, k - 1, t) >= ranked.value(0, k, t));
                }
            }
            let mut sorted: Vec<f64> = (0..n).map(|i| paths[i][t]).collect();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            coincident += sorted.windows(2).filter(|w| w[0] == w[1]).count();
            ranked_coincident += (1..n).filter(|&k| ranked.value(0, k - 1, t) == ranked.value(0, k, t)).count();
        }
        prop_assert_eq!(coincident, ranked_coincident);
        if n >= 2 {
            let stats = coincidence_stats(&ens, 1e-12).unwrap();
            let pair = stats.pair(0, 1).unwrap();
            let ties = (0..=m).filter(|&t| paths[0][t] == paths[1][t]).count();
            prop_assert_eq!(pair.ties as usize, ties);
        }
    }

    #[test]
    fn rank_reconstruction_sums_to_total_change(paths in lattice_paths()) {
        let m = paths[0].len() - 1;
        let ens = PathEnsemble::from_series(build_grid(1.0, m).unwrap(), &paths).unwrap();
        let (ranked, frames) = ranked_ensemble(&ens);
        let rec = rank_reconstruction(&ens, &frames, 0).unwrap();
        let n = paths.len();
        let lhs: f64 = rec.iter().map(|r| r[m]).sum();
        let rhs: f64 = (0..n).map(|i| paths[i][m] - paths[i][0]).sum::<f64>()
            + (0..n).map(|k| ranked.value(0, k, 0)).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-8);
    }

    #[test]
    fn two_asset_rank_residuals_match_minmax((x, y) in pair(3..40)) {
        let m = x.len() - 1;
        let ens = PathEnsemble::from_series(build_grid(1.0, m).unwrap(), &[x.clone(), y.clone()]).unwrap();
        let (_, frames) = ranked_ensemble(&ens);
        let ranks = verify_rank_representation(&ens, &frames).unwrap();
        let mm = verify_minmax(&x, &y).unwrap();
        prop_assert_eq!(ranks[0][0], mm.max);
        prop_assert_eq!(ranks[0][1], mm.min);
    }

    #[test]
    fn weights_sum_to_one(paths in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 2..6)) {
        let ens = PathEnsemble::from_series(build_grid(1.0, 5).unwrap(), &paths).unwrap();
        let mu = market_weights(&ens);
        prop_assert!(mu.max_normalization_error() <= 1e-12);
        let (_, frames) = ranked_ensemble(&ens);
        for g in [Generator::Entropy, Generator::Diversity { p: 0.5 }, Generator::GeometricMean] {
            let pi = generated_weights(&mu, &frames, &g).unwrap();
            prop_assert!(pi.max_normalization_error() <= 1e-10);
        }
    }

    #[test]
    fn log_gradients_match_finite_differences(raw in prop::collection::vec(0.05f64..1.0, 2..7)) {
        let total: f64 = raw.iter().sum();
        let x: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let step = 1e-6;
        for g in [Generator::Entropy, Generator::Diversity { p: 0.3 }, Generator::GeometricMean, Generator::Constant { value: 2.0 }] {
            let mut grad = vec![0.0; x.len()];
            g.log_gradient(&x, &mut grad).unwrap();
            for k in 0..x.len() {
                let mut up = x.clone();
                let mut down = x.clone();
                up[k] += step;
                down[k] -= step;
                let fd = (g.value(&up).unwrap().ln() - g.value(&down).unwrap().ln()) / (2.0 * step);
                prop_assert!((fd - grad[k]).abs() <= 1e-6 * grad[k].abs().max(1.0), "{} k={k}: {fd} vs {}", g.name(), grad[k]);
            }
        }
    }
}
