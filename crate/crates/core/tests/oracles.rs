use atlas_core::calculus::{local_time_residual, realized_variation};
use atlas_core::paths::{build_grid, Increments, RngSpec};
use atlas_core::portfolio::Generator;
use atlas_core::sde::{AtlasParams, Model, RankBasedParams};
use atlas_core::stats::Summary;
use atlas_core::verification::{Claim, ConvergenceStudy};

fn study(model: Model, levels: &[usize], paths: usize) -> ConvergenceStudy {
    ConvergenceStudy {
        model,
        horizon: 1.0,
        levels: levels.to_vec(),
        paths,
        rng: RngSpec::new(7),
        generator: Generator::Entropy,
    }
}

fn atlas(n: usize) -> Model {
    Model::Atlas(AtlasParams::new(n, 0.1, 0.2).unwrap())
}

#[test]
fn increments_have_mean_zero_and_variance_h() {
    let grid = build_grid(1.0, 1024).unwrap();
    let inc = Increments::generate(&RngSpec::new(3), grid, 2, 100).unwrap();
    let s = Summary::of(inc.as_slice());
    let h = grid.step();
    assert!(s.mean.abs() < 5.0 * s.std_error, "mean {}", s.mean);
    // Var of dW^2 is 2 h^2
    let sq: Vec<f64> = inc.as_slice().iter().map(|d| d * d).collect();
    let q = Summary::of(&sq);
    assert!((q.mean - h).abs() < 5.0 * q.std_error, "{} vs {h}", q.mean);
}

#[test]
fn quadratic_variation_of_scaled_brownian_motion() {
    let sigma = 0.7;
    let model = Model::Brownian { n: 1, sigma };
    let ens = model.simulate(build_grid(1.0, 4096).unwrap(), &RngSpec::new(11), 100).unwrap();
    let qv: Vec<f64> = (0..100).map(|p| realized_variation(ens.series(p, 0))).collect();
    let s = Summary::of(&qv);
    assert!((s.mean - sigma * sigma).abs() < 5.0 * s.std_error, "{s:?}");
}

#[test]
fn local_time_at_one_matches_mean_absolute_value() {
    let model = Model::Brownian { n: 1, sigma: 1.0 };
    let ens = model.simulate(build_grid(1.0, 4096).unwrap(), &RngSpec::new(5), 400).unwrap();
    let ends: Vec<f64> = (0..400)
        .map(|p| {
            let lt = local_time_residual(ens.series(p, 0)).unwrap();
            let std_end = *lt.standard.last().unwrap();
            assert!((lt.literal.last().unwrap() + 0.5 * std_end).abs() < 1e-12);
            std_end
        })
        .collect();
    let s = Summary::of(&ends);
    let oracle = (2.0 / std::f64::consts::PI).sqrt();
    assert!((s.mean - oracle).abs() < 5.0 * s.std_error, "{} vs {oracle}", s.mean);
}

#[test]
fn atlas_drift_sum_has_brownian_law() {
    let n = 4;
    let sigma = 0.2;
    let model = Model::Atlas(AtlasParams::new(n, 0.1, sigma).unwrap());
    let paths = 400;
    let ens = model.simulate(build_grid(1.0, 256).unwrap(), &RngSpec::new(9), paths).unwrap();
    let m = 256;
    let sums: Vec<f64> = (0..paths)
        .map(|p| (0..n).map(|i| ens.value(p, i, m) - ens.value(p, i, 0)).sum())
        .collect();
    let s = Summary::of(&sums);
    assert!(s.mean.abs() < 5.0 * s.std_error);
    let target = n as f64 * sigma * sigma;
    // relative standard error of a normal sample variance
    let rel_se = (2.0 / (paths as f64 - 1.0)).sqrt();
    assert!((s.variance / target - 1.0).abs() < 5.0 * rel_se, "{} vs {target}", s.variance);
}

#[test]
fn claims_converge_on_noisy_paths() {
    let levels = [64, 256, 1024];
    for (claim, model) in [
        (Claim::Lemma2, Model::Brownian { n: 1, sigma: 1.0 }),
        (Claim::Lemma3, atlas(2)),
        (Claim::Lemma4Max, Model::Brownian { n: 2, sigma: 1.0 }),
        (Claim::Lemma4Min, Model::Brownian { n: 2, sigma: 1.0 }),
        (Claim::Prop1, atlas(3)),
        (Claim::Prop3, atlas(3)),
    ] {
        let report = study(model, &levels, 40).run(claim).unwrap();
        assert_eq!(report.levels.len(), 3);
        assert!(report.decreasing_within(5.0), "{}: {:?}", claim.name(), report.mean_residuals());
        assert!(report.levels.iter().all(|l| l.mean_residual >= 0.0 && l.max_residual >= l.mean_residual));
        let steps = report.step_sizes();
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn separated_smooth_paths_give_round_off_and_no_rate() {
    let params = RankBasedParams::new(vec![0.0, 0.0], vec![1e-9, 1e-9])
        .unwrap()
        .with_initial(vec![1.0, 0.0])
        .unwrap();
    let report = study(Model::RankBased(params), &[16, 64, 256], 4).run(Claim::Lemma4Max).unwrap();
    assert!(report.levels.iter().all(|l| l.max_residual < 1e-12), "{:?}", report.levels);
    assert!(report.fitted_rate.is_none());
}

#[test]
fn doubling_paths_shrinks_standard_error_by_root_two() {
    let model = Model::Brownian { n: 1, sigma: 1.0 };
    let small = study(model.clone(), &[64, 256, 1024], 100).run(Claim::Lemma2).unwrap();
    let large = study(model, &[64, 256, 1024], 200).run(Claim::Lemma2).unwrap();
    for (a, b) in small.levels.iter().zip(&large.levels) {
        let ratio = a.std_error / b.std_error;
        let expected = 2f64.sqrt();
        assert!(ratio > expected / 3.0 && ratio < expected * 3.0, "ratio {ratio}");
    }
}

#[test]
fn coupled_levels_share_brownian_values() {
    let model = Model::Brownian { n: 1, sigma: 1.0 };
    let s = study(model, &[8, 32, 128], 3);
    let per_path = s.run_levels(|ens| Ok(ens.series(0, 0).to_vec())).unwrap();
    for levels in per_path {
        for (l, coarse) in levels.iter().enumerate() {
            let fine = &levels[2];
            let stride = 128 / s.levels[l];
            for (m, v) in coarse.iter().enumerate() {
                assert!((v - fine[m * stride]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn constant_generator_has_no_structural_drift() {
    let mut s = study(atlas(3), &[32, 128, 512], 10);
    s.generator = Generator::Constant { value: 1.0 };
    let d = s.run_decomposition().unwrap();
    // relative return and theta vanish exactly; the midpoint sum only in the limit
    for l in &d.levels {
        assert_eq!(l.theta_variation.max, 0.0);
        assert_eq!(l.relative_variation.max, 0.0);
        assert!(l.structural_residual.max < 1e-3);
    }
    let res: Vec<f64> = d.levels.iter().map(|l| l.structural_residual.mean).collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
}

#[test]
fn entropy_decomposition_converges() {
    let d = study(atlas(4), &[64, 256, 1024], 30).run_decomposition().unwrap();
    let res: Vec<f64> = d.levels.iter().map(|l| l.structural_residual.mean).collect();
    let qv: Vec<f64> = d.levels.iter().map(|l| l.theta_variation.mean).collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
    assert!(qv.windows(2).all(|w| w[1] < w[0]), "{qv:?}");
    let rel: Vec<f64> = d.levels.iter().map(|l| l.relative_variation.mean).collect();
    let (lo, hi) = rel.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi / lo < 2.0, "{rel:?}");
}

#[test]
fn equal_weight_theta_endpoint_stabilizes() {
    let mut s = study(atlas(3), &[64, 256, 1024], 40);
    s.generator = Generator::GeometricMean;
    let d = s.run_decomposition().unwrap();
    for w in d.levels.windows(2) {
        let (a, b) = (w[0].theta_end, w[1].theta_end);
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 5.0 * se, "{} vs {}", a.mean, b.mean);
    }
}

#[test]
fn band_occupation_shrinks_with_step() {
    let report = study(atlas(2), &[64, 256, 1024], 40).run_band_occupation(0, 1).unwrap();
    assert!(report.decreasing_within(5.0), "{:?}", report.mean_residuals());
}

#[test]
fn numeric_failures_name_the_path() {
    let params = RankBasedParams::new(vec![1e308, 1e308], vec![1.0, 1.0]).unwrap();
    let mut s = study(Model::RankBased(params), &[4, 8, 16], 3);
    s.horizon = 100.0;
    let err = s.run(Claim::Lemma3).unwrap_err();
    assert!(err.is_numeric(), "{err:?}");
    assert_eq!(err.location().unwrap().0, 0);
}
