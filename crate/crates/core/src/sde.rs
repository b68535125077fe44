//! Euler–Maruyama simulation of rank-based log-capitalization dynamics.
//!
//! Each step freezes the ranks at the left endpoint:
//!
//! ```text
//! log X_i(t_{m+1}) = log X_i(t_m) + g_{r(i)} h + sigma_{r(i)} dW_i(m),   r = rank at t_m
//! ```
//!
//! The Atlas model is the special case `g_k = -g` for `k < n`, `g_n = (n-1) g`,
//! `sigma_k = sigma`. Within-step crossings are not resolved.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::{Increments, PathEnsemble, RngSpec, TimeGrid};
use crate::rank::rank_into;

fn check_initial(n: usize, initial_log: &[f64]) -> Result<()> {
    if initial_log.len() != n {
        return Err(Error::invalid(
            "initial_log",
            format!("expected {n} values, got {}", initial_log.len()),
        ));
    }
    if initial_log.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial_log", "values must be finite"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtlasParams {
    n: usize,
    growth: f64,
    sigma: f64,
    initial_log: Vec<f64>,
}

impl AtlasParams {
    /// Atlas parameters with every log-capitalization starting at 0.
    pub fn new(n: usize, growth: f64, sigma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("n", format!("need at least 2 assets, got {n}")));
        }
        if !(growth > 0.0 && growth.is_finite()) {
            return Err(Error::invalid("g", format!("must be positive, got {growth}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(Self {
            n,
            growth,
            sigma,
            initial_log: vec![0.0; n],
        })
    }

    pub fn with_initial(mut self, initial_log: Vec<f64>) -> Result<Self> {
        check_initial(self.n, &initial_log)?;
        self.initial_log = initial_log;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn initial_log(&self) -> &[f64] {
        &self.initial_log
    }

    /// Per-rank form: `-g` for ranks `1..n-1`, `(n-1) g` for the smallest.
    pub fn to_rank_based(&self) -> RankBasedParams {
        let mut drifts = vec![-self.growth; self.n];
        drifts[self.n - 1] = (self.n - 1) as f64 * self.growth;
        RankBasedParams {
            drifts,
            sigmas: vec![self.sigma; self.n],
            initial_log: self.initial_log.clone(),
        }
    }
}

/// Per-rank drifts and volatilities (a first-order model); index 0 is the top rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankBasedParams {
    drifts: Vec<f64>,
    sigmas: Vec<f64>,
    initial_log: Vec<f64>,
}

impl RankBasedParams {
    pub fn new(drifts: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        let n = drifts.len();
        if n < 2 {
            return Err(Error::invalid("drifts", format!("need at least 2 ranks, got {n}")));
        }
        if sigmas.len() != n {
            return Err(Error::invalid(
                "sigmas",
                format!("expected {n} values, got {}", sigmas.len()),
            ));
        }
        if drifts.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("drifts", "values must be finite"));
        }
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigmas", "values must be positive"));
        }
        Ok(Self {
            drifts,
            sigmas,
            initial_log: vec![0.0; n],
        })
    }

    pub fn with_initial(mut self, initial_log: Vec<f64>) -> Result<Self> {
        check_initial(self.n(), &initial_log)?;
        self.initial_log = initial_log;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.drifts.len()
    }

    pub fn drifts(&self) -> &[f64] {
        &self.drifts
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn initial_log(&self) -> &[f64] {
        &self.initial_log
    }

    /// True iff the coefficients are exactly those of an Atlas model.
    pub fn is_atlas(&self) -> bool {
        let n = self.n();
        let g = -self.drifts[0];
        g > 0.0
            && self.drifts[..n - 1].iter().all(|&d| d == -g)
            && self.drifts[n - 1] == (n - 1) as f64 * g
            && self.sigmas.iter().all(|&s| s == self.sigmas[0])
    }
}

fn euler_path(params: &RankBasedParams, increments: &Increments, path: usize, out: &mut [f64]) -> Result<()> {
    let n = params.n();
    let h = increments.grid().step();
    let points = increments.grid().len();
    let mut state = params.initial_log.clone();
    let (mut order, mut rank) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let noise: Vec<&[f64]> = (0..n).map(|i| increments.get(path, i)).collect();
    for (i, x) in state.iter().enumerate() {
        out[i * points] = *x;
    }
    for m in 0..points - 1 {
        rank_into(&state, &mut order, &mut rank);
        for i in 0..n {
            let k = rank[i];
            state[i] += params.drifts[k] * h + params.sigmas[k] * noise[i][m];
            if !state[i].is_finite() {
                return Err(Error::NonFinite {
                    path,
                    asset: i,
                    step: m + 1,
                });
            }
            out[i * points + m + 1] = state[i];
        }
    }
    Ok(())
}

/// Simulate log-capitalizations from precomputed increments.
///
/// Numbered paths in any error refer to rows of `increments`.
pub fn simulate_rank_based_with(params: &RankBasedParams, increments: &Increments) -> Result<PathEnsemble> {
    let n = params.n();
    if increments.num_assets() != n {
        return Err(Error::invalid(
            "increments",
            format!("carry {} assets, model has {n}", increments.num_assets()),
        ));
    }
    let grid = increments.grid();
    let block = n * grid.len();
    let mut values = vec![0.0; increments.paths() * block];
    let outcomes: Vec<Result<()>> = values
        .par_chunks_mut(block)
        .enumerate()
        .map(|(p, out)| euler_path(params, increments, p, out))
        .collect();
    // report the lowest failing path regardless of scheduling
    outcomes.into_iter().collect::<Result<()>>()?;
    PathEnsemble::new(grid, n, increments.paths(), values)
}

pub fn simulate_rank_based(
    params: &RankBasedParams,
    grid: TimeGrid,
    rng: &RngSpec,
    paths: usize,
) -> Result<PathEnsemble> {
    let increments = Increments::generate(rng, grid, params.n(), paths)?;
    simulate_rank_based_with(params, &increments)
}

pub fn simulate_atlas_with(params: &AtlasParams, increments: &Increments) -> Result<PathEnsemble> {
    simulate_rank_based_with(&params.to_rank_based(), increments)
}

pub fn simulate_atlas(params: &AtlasParams, grid: TimeGrid, rng: &RngSpec, paths: usize) -> Result<PathEnsemble> {
    simulate_rank_based(&params.to_rank_based(), grid, rng, paths)
}

/// Model families the verification studies can drive.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// `n` independent Brownian motions `sigma W_i` started at zero.
    Brownian { n: usize, sigma: f64 },
    Atlas(AtlasParams),
    RankBased(RankBasedParams),
}

impl Model {
    pub fn num_assets(&self) -> usize {
        match self {
            Model::Brownian { n, .. } => *n,
            Model::Atlas(p) => p.n(),
            Model::RankBased(p) => p.n(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Model::Brownian { n, sigma } = self {
            if *n == 0 {
                return Err(Error::invalid("n", "need at least one process"));
            }
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
            }
        }
        Ok(())
    }

    pub fn simulate_with(&self, increments: &Increments) -> Result<PathEnsemble> {
        match self {
            Model::Brownian { n, sigma } => {
                self.validate()?;
                if increments.num_assets() != *n {
                    return Err(Error::invalid(
                        "increments",
                        format!("carry {} assets, model has {n}", increments.num_assets()),
                    ));
                }
                let mut values = Vec::with_capacity(increments.paths() * n * increments.grid().len());
                for p in 0..increments.paths() {
                    for i in 0..*n {
                        values.extend(increments.brownian_path(p, i).iter().map(|w| sigma * w));
                    }
                }
                PathEnsemble::new(increments.grid(), *n, increments.paths(), values)
            }
            Model::Atlas(params) => simulate_atlas_with(params, increments),
            Model::RankBased(params) => simulate_rank_based_with(params, increments),
        }
    }

    pub fn simulate(&self, grid: TimeGrid, rng: &RngSpec, paths: usize) -> Result<PathEnsemble> {
        let increments = Increments::generate(rng, grid, self.num_assets(), paths)?;
        self.simulate_with(&increments)
    }
}
