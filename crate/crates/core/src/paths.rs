//! Time grids, multi-asset path storage and reproducible Gaussian increments.
//!
//! Every random number in the crate comes from a per-`(path, asset)` ChaCha8
//! substream, so an ensemble is a pure function of the master seed and its
//! dimensions no matter how the work is scheduled across threads.
//!
//! Reproducibility contract:
//!
//! ```text
//! key    = (path << 32) | asset
//! seed   = mix64(master_seed ^ mix64(key))        mix64 = SplitMix64 finalizer
//! stream = ChaCha8Rng::seed_from_u64(seed)
//! dW[m]  = sqrt(h) * z_m,   z_m ~ rand_distr::StandardNormal (ziggurat), m = 0..M
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `M` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(
                "horizon",
                format!("must be positive and finite, got {horizon}"),
            ));
        }
        if steps < 2 {
            return Err(Error::invalid(
                "steps",
                format!("need at least 2 steps, got {steps}"),
            ));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `h = T / M`.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Number of grid points, `M + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid point `t_m = m h`; the last point is pinned to `T`.
    pub fn time(&self, m: usize) -> f64 {
        if m >= self.steps {
            self.horizon
        } else {
            m as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.time(m)).collect()
    }

    /// The grid with `factor` fine steps merged into each coarse step.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::invalid(
                "coarsening factor",
                format!("{factor} does not divide {} steps", self.steps),
            ));
        }
        TimeGrid::new(self.horizon, self.steps / factor)
    }
}

pub fn build_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Master seed plus the substream derivation rule documented at module level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Injective in `(path, asset)` for indices below `2^32`: the key packing
    /// is injective and each subsequent step is a bijection of `u64`.
    pub fn substream_seed(&self, path: usize, asset: usize) -> u64 {
        debug_assert!((path as u64) < (1 << 32) && (asset as u64) < (1 << 32));
        let key = ((path as u64) << 32) | asset as u64;
        mix64(self.master_seed ^ mix64(key))
    }

    pub fn substream(&self, path: usize, asset: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.substream_seed(path, asset))
    }
}

fn check_index_range(paths_end: usize, assets: usize) -> Result<()> {
    if paths_end as u64 > (1 << 32) || assets as u64 > (1 << 32) {
        return Err(Error::invalid(
            "ensemble size",
            "path and asset indices must stay below 2^32",
        ));
    }
    Ok(())
}

fn fill_normals(rng: &mut ChaCha8Rng, scale: f64, out: &mut [f64]) {
    for slot in out {
        let z: f64 = rng.sample(StandardNormal);
        *slot = scale * z;
    }
}

/// Brownian increments `dW` laid out as `(path, asset, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    grid: TimeGrid,
    num_assets: usize,
    paths: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn generate(spec: &RngSpec, grid: TimeGrid, num_assets: usize, paths: usize) -> Result<Self> {
        if num_assets == 0 || paths == 0 {
            return Err(Error::invalid("ensemble size", "need at least one asset and one path"));
        }
        check_index_range(paths, num_assets)?;
        let steps = grid.steps();
        let scale = grid.step().sqrt();
        let mut data = vec![0.0; paths * num_assets * steps];
        data.par_chunks_mut(steps).enumerate().for_each(|(idx, chunk)| {
            let mut rng = spec.substream(idx / num_assets, idx % num_assets);
            fill_normals(&mut rng, scale, chunk);
        });
        Ok(Self {
            grid,
            num_assets,
            paths,
            data,
        })
    }

    /// Increments of a single path drawn from the substreams of `path_index`.
    ///
    /// Equal to row `path_index` of [`Increments::generate`] with any larger
    /// path count.
    pub fn generate_path(
        spec: &RngSpec,
        grid: TimeGrid,
        num_assets: usize,
        path_index: usize,
    ) -> Result<Self> {
        if num_assets == 0 {
            return Err(Error::invalid("ensemble size", "need at least one asset"));
        }
        check_index_range(path_index + 1, num_assets)?;
        let steps = grid.steps();
        let scale = grid.step().sqrt();
        let mut data = vec![0.0; num_assets * steps];
        for (asset, chunk) in data.chunks_mut(steps).enumerate() {
            fill_normals(&mut spec.substream(path_index, asset), scale, chunk);
        }
        Ok(Self {
            grid,
            num_assets,
            paths: 1,
            data,
        })
    }

    pub fn from_vec(grid: TimeGrid, num_assets: usize, paths: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != paths * num_assets * grid.steps() {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: paths * num_assets * grid.steps(),
            });
        }
        Ok(Self {
            grid,
            num_assets,
            paths,
            data,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_assets(&self) -> usize {
        self.num_assets
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, path: usize, asset: usize) -> &[f64] {
        let steps = self.grid.steps();
        let start = (path * self.num_assets + asset) * steps;
        &self.data[start..start + steps]
    }

    /// Sum each run of `factor` consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        if factor == 1 {
            return Ok(self.clone());
        }
        let data = self
            .data
            .chunks_exact(factor)
            .map(|block| block.iter().sum())
            .collect();
        Ok(Self {
            grid,
            num_assets: self.num_assets,
            paths: self.paths,
            data,
        })
    }

    /// Cumulative sum started at zero: a discrete Brownian path on the grid.
    pub fn brownian_path(&self, path: usize, asset: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        out.push(acc);
        for dw in self.get(path, asset) {
            acc += dw;
            out.push(acc);
        }
        out
    }
}

pub fn gaussian_increments(
    spec: &RngSpec,
    grid: TimeGrid,
    num_assets: usize,
    paths: usize,
) -> Result<Increments> {
    Increments::generate(spec, grid, num_assets, paths)
}

pub fn coarsen_increments(increments: &Increments, factor: usize) -> Result<Increments> {
    increments.coarsen(factor)
}

/// Values of `n` processes over a grid for `P` paths, laid out `(path, asset, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    num_assets: usize,
    paths: usize,
    values: Vec<f64>,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, num_assets: usize, paths: usize, values: Vec<f64>) -> Result<Self> {
        if num_assets == 0 || paths == 0 {
            return Err(Error::invalid("ensemble size", "need at least one asset and one path"));
        }
        let expected = paths * num_assets * grid.len();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: expected,
            });
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let len = grid.len();
            return Err(Error::NonFinite {
                path: idx / (num_assets * len),
                asset: (idx / len) % num_assets,
                step: idx % len,
            });
        }
        Ok(Self {
            grid,
            num_assets,
            paths,
            values,
        })
    }

    /// Single-path ensemble from one series per asset.
    pub fn from_series(grid: TimeGrid, series: &[Vec<f64>]) -> Result<Self> {
        let values = series.iter().flatten().copied().collect();
        Self::new(grid, series.len(), 1, values)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_assets(&self) -> usize {
        self.num_assets
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn series(&self, path: usize, asset: usize) -> &[f64] {
        let len = self.grid.len();
        let start = (path * self.num_assets + asset) * len;
        &self.values[start..start + len]
    }

    pub fn value(&self, path: usize, asset: usize, m: usize) -> f64 {
        self.series(path, asset)[m]
    }

    /// Cross-section of all assets at time index `m`.
    pub fn column(&self, path: usize, m: usize) -> Vec<f64> {
        (0..self.num_assets).map(|i| self.value(path, i, m)).collect()
    }

    /// Single-path ensemble holding path `path`.
    pub fn path(&self, path: usize) -> PathEnsemble {
        let len = self.grid.len() * self.num_assets;
        PathEnsemble {
            grid: self.grid,
            num_assets: self.num_assets,
            paths: 1,
            values: self.values[path * len..(path + 1) * len].to_vec(),
        }
    }

    /// Apply `f` pointwise to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PathEnsemble> {
        Self::new(
            self.grid,
            self.num_assets,
            self.paths,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let grid = build_grid(1.0, 4).unwrap();
        assert_eq!(grid.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(build_grid(2.0, 2).unwrap().step(), 1.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(build_grid(1.0, 0).is_err());
        assert!(build_grid(1.0, 1).is_err());
        assert!(build_grid(0.0, 10).is_err());
        assert!(build_grid(-1.0, 10).is_err());
        assert!(build_grid(f64::NAN, 10).is_err());
    }

    #[test]
    fn last_grid_point_is_horizon() {
        let grid = build_grid(0.3, 7).unwrap();
        assert_eq!(grid.time(7), 0.3);
        assert!((grid.time(6) - 6.0 * 0.3 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn substream_seeds_distinct() {
        let spec = RngSpec::new(42);
        let mut seen = std::collections::HashSet::new();
        for p in 0..200 {
            for a in 0..20 {
                assert!(seen.insert(spec.substream_seed(p, a)));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let grid = build_grid(1.0, 64).unwrap();
        let spec = RngSpec::new(7);
        let a = gaussian_increments(&spec, grid, 3, 5).unwrap();
        let b = gaussian_increments(&spec, grid, 3, 5).unwrap();
        assert_eq!(a, b);
        let other = gaussian_increments(&RngSpec::new(8), grid, 3, 5).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn single_path_matches_ensemble_row() {
        let grid = build_grid(1.0, 32).unwrap();
        let spec = RngSpec::new(3);
        let all = gaussian_increments(&spec, grid, 2, 6).unwrap();
        let one = Increments::generate_path(&spec, grid, 2, 4).unwrap();
        assert_eq!(all.get(4, 0), one.get(0, 0));
        assert_eq!(all.get(4, 1), one.get(0, 1));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let grid = build_grid(1.0, 128).unwrap();
        let spec = RngSpec::new(11);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| gaussian_increments(&spec, grid, 4, 9).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| gaussian_increments(&spec, grid, 4, 9).unwrap());
        assert_eq!(one, many);
    }

    #[test]
    fn coarsen_identity_and_errors() {
        let grid = build_grid(1.0, 12).unwrap();
        let inc = gaussian_increments(&RngSpec::new(1), grid, 2, 2).unwrap();
        assert_eq!(coarsen_increments(&inc, 1).unwrap(), inc);
        assert!(coarsen_increments(&inc, 5).is_err());
        assert!(coarsen_increments(&inc, 0).is_err());
        let c = coarsen_increments(&inc, 3).unwrap();
        assert_eq!(c.grid().steps(), 4);
        assert_eq!(c.get(1, 1)[2], inc.get(1, 1)[6..9].iter().sum::<f64>());
    }

    #[test]
    fn coarse_path_is_restriction_of_fine_path() {
        let grid = build_grid(1.0, 1 << 10).unwrap();
        let inc = gaussian_increments(&RngSpec::new(5), grid, 1, 3).unwrap();
        for factor in [2, 4, 16] {
            let coarse = inc.coarsen(factor).unwrap();
            for p in 0..3 {
                let fine = inc.brownian_path(p, 0);
                let wc = coarse.brownian_path(p, 0);
                for (m, w) in wc.iter().enumerate() {
                    assert!((w - fine[m * factor]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn ensemble_validates_shape_and_finiteness() {
        let grid = build_grid(1.0, 2).unwrap();
        assert!(PathEnsemble::new(grid, 2, 1, vec![0.0; 5]).is_err());
        let err = PathEnsemble::new(grid, 2, 1, vec![0.0, 0.0, 0.0, 0.0, f64::INFINITY, 0.0]).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                path: 0,
                asset: 1,
                step: 1
            }
        );
        let ens = PathEnsemble::new(grid, 2, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(ens.series(0, 1), &[4.0, 5.0, 6.0]);
        assert_eq!(ens.column(0, 2), vec![3.0, 6.0]);
    }
}
