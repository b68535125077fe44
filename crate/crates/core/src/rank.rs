//! Rank permutations and ranked processes.
//!
//! Ranks are 0-based here: rank 0 is the largest value. Ties are broken by
//! asset index, the lower index taking the better (smaller) rank. Exact
//! floating-point ties are honoured with no tolerance.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::PathEnsemble;

/// Fill `order` with assets sorted by rank and `rank` with its inverse.
pub fn rank_into(values: &[f64], order: &mut Vec<usize>, rank: &mut Vec<usize>) {
    order.clear();
    order.extend(0..values.len());
    // stable sort keeps ascending index order among exact ties
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("rank input must not contain NaN")
    });
    rank.clear();
    rank.resize(values.len(), 0);
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k;
    }
}

/// `(r, p)`: `r[i]` is the rank of asset `i`, `p[k]` the asset holding rank `k`.
pub fn rank_permutation(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order = Vec::with_capacity(values.len());
    let mut rank = Vec::with_capacity(values.len());
    rank_into(values, &mut order, &mut rank);
    (rank, order)
}

/// Per-(path, time) rank permutation and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct RankFrame {
    num_assets: usize,
    paths: usize,
    points: usize,
    // both laid out (path, m, slot)
    rank: Vec<u32>,
    asset: Vec<u32>,
}

impl RankFrame {
    pub fn num_assets(&self) -> usize {
        self.num_assets
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn points(&self) -> usize {
        self.points
    }

    fn offset(&self, path: usize, m: usize) -> usize {
        (path * self.points + m) * self.num_assets
    }

    /// Rank of `asset` at time index `m`.
    pub fn rank_of(&self, path: usize, m: usize, asset: usize) -> usize {
        self.rank[self.offset(path, m) + asset] as usize
    }

    /// Asset holding rank `k` at time index `m`.
    pub fn asset_at(&self, path: usize, m: usize, k: usize) -> usize {
        self.asset[self.offset(path, m) + k] as usize
    }

    pub fn ranks(&self, path: usize, m: usize) -> &[u32] {
        let o = self.offset(path, m);
        &self.rank[o..o + self.num_assets]
    }

    pub fn assets(&self, path: usize, m: usize) -> &[u32] {
        let o = self.offset(path, m);
        &self.asset[o..o + self.num_assets]
    }
}

/// Ranked processes `X_(k)` and the frames that produced them.
pub fn ranked_ensemble(ensemble: &PathEnsemble) -> (PathEnsemble, RankFrame) {
    let n = ensemble.num_assets();
    let points = ensemble.grid().len();
    let paths = ensemble.paths();

    let per_path: Vec<(Vec<f64>, Vec<u32>, Vec<u32>)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut sorted = vec![0.0; n * points];
            let mut ranks = Vec::with_capacity(n * points);
            let mut assets = Vec::with_capacity(n * points);
            let mut column = vec![0.0; n];
            let (mut order, mut rank) = (Vec::new(), Vec::new());
            for m in 0..points {
                for (i, c) in column.iter_mut().enumerate() {
                    *c = ensemble.value(p, i, m);
                }
                rank_into(&column, &mut order, &mut rank);
                for (k, &i) in order.iter().enumerate() {
                    sorted[k * points + m] = column[i];
                }
                ranks.extend(rank.iter().map(|&r| r as u32));
                assets.extend(order.iter().map(|&i| i as u32));
            }
            (sorted, ranks, assets)
        })
        .collect();

    let mut values = Vec::with_capacity(paths * n * points);
    let mut rank = Vec::with_capacity(paths * n * points);
    let mut asset = Vec::with_capacity(paths * n * points);
    for (v, r, a) in per_path {
        values.extend(v);
        rank.extend(r);
        asset.extend(a);
    }
    let ranked = PathEnsemble::new(ensemble.grid(), n, paths, values)
        .expect("sorting preserves shape and finiteness");
    (
        ranked,
        RankFrame {
            num_assets: n,
            paths,
            points,
            rank,
            asset,
        },
    )
}

/// `1{r_m(asset) = k}` over the grid, as 0.0/1.0.
pub fn occupation_indicator(frames: &RankFrame, path: usize, asset: usize, k: usize) -> Vec<f64> {
    (0..frames.points())
        .map(|m| if frames.rank_of(path, m, asset) == k { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    pub i: usize,
    pub j: usize,
    /// Grid points with `X_i == X_j` exactly.
    pub ties: u64,
    /// Steps across which `sgn(X_i - X_j)` flips.
    pub sign_changes: u64,
    /// Fraction of grid points with `|X_i - X_j| < band`, pooled over paths.
    pub band_occupation: f64,
    /// Standard error of the per-path band fraction across paths.
    pub band_occupation_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceStats {
    pub band: f64,
    pub grid_points: u64,
    pub pairs: Vec<PairStats>,
    /// Grid points where three or more assets lie within one band of each other.
    pub triple_points: u64,
}

impl CoincidenceStats {
    pub fn pair(&self, i: usize, j: usize) -> Option<&PairStats> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().find(|s| s.i == i && s.j == j)
    }
}

/// Per pair (ties, sign changes, in-band count), then the triple count.
type PathCounts = (Vec<(u64, u64, u64)>, u64);

fn positive(x: f64) -> bool {
    x > 0.0
}

pub fn coincidence_stats(ensemble: &PathEnsemble, band: f64) -> Result<CoincidenceStats> {
    if !(band > 0.0 && band.is_finite()) {
        return Err(Error::invalid("band", format!("must be positive, got {band}")));
    }
    let n = ensemble.num_assets();
    let points = ensemble.grid().len();
    let paths = ensemble.paths();
    let pair_list: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();

    let per_path: Vec<PathCounts> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let counts = pair_list
                .iter()
                .map(|&(i, j)| {
                    let (x, y) = (ensemble.series(p, i), ensemble.series(p, j));
                    let mut ties = 0;
                    let mut flips = 0;
                    let mut inside = 0;
                    for m in 0..points {
                        let d = x[m] - y[m];
                        if x[m] == y[m] {
                            ties += 1;
                        }
                        if d.abs() < band {
                            inside += 1;
                        }
                        if m + 1 < points && positive(d) != positive(x[m + 1] - y[m + 1]) {
                            flips += 1;
                        }
                    }
                    (ties, flips, inside)
                })
                .collect();
            let mut triples = 0;
            if n >= 3 {
                let mut column = vec![0.0; n];
                for m in 0..points {
                    for (i, c) in column.iter_mut().enumerate() {
                        *c = ensemble.value(p, i, m);
                    }
                    column.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if column.windows(3).any(|w| w[0] - w[2] < band) {
                        triples += 1;
                    }
                }
            }
            (counts, triples)
        })
        .collect();

    let total = (paths * points) as u64;
    let pairs = pair_list
        .iter()
        .enumerate()
        .map(|(idx, &(i, j))| {
            let mut ties = 0;
            let mut flips = 0;
            let mut inside = 0;
            let fractions: Vec<f64> = per_path
                .iter()
                .map(|(c, _)| {
                    ties += c[idx].0;
                    flips += c[idx].1;
                    inside += c[idx].2;
                    c[idx].2 as f64 / points as f64
                })
                .collect();
            PairStats {
                i,
                j,
                ties,
                sign_changes: flips,
                band_occupation: inside as f64 / total as f64,
                band_occupation_std_error: crate::stats::Summary::of(&fractions).std_error,
            }
        })
        .collect();
    Ok(CoincidenceStats {
        band,
        grid_points: total,
        pairs,
        triple_points: per_path.iter().map(|(_, t)| t).sum(),
    })
}
