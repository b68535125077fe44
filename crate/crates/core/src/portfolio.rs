//! Market weights, portfolios generated by functions of ranked weights, and
//! the structural / trading decomposition of relative log-returns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{realized_variation, stratonovich_integral};
use crate::error::{Error, Result};
use crate::paths::{PathEnsemble, TimeGrid};
use crate::rank::RankFrame;

/// Smallest ranked weight the log-type generators accept.
pub const INTERIOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct DomainError(pub String);

/// A positive `C^2` function on a neighbourhood of the unit simplex.
pub trait GeneratingFunction: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: &[f64]) -> std::result::Result<f64, DomainError>;

    /// `D_k log S(x)` for every coordinate.
    fn log_gradient(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), DomainError>;

    /// `D_k S(x) = S(x) D_k log S(x)`.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), DomainError> {
        let s = self.value(x)?;
        self.log_gradient(x, out)?;
        out.iter_mut().for_each(|o| *o *= s);
        Ok(())
    }
}

/// Built-in generating functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Generator {
    /// `S = c`; generates the market portfolio.
    Constant { value: f64 },
    /// `S = -sum x log x`.
    Entropy,
    /// `S = (sum x^p)^(1/p)`, `0 < p < 1`.
    Diversity { p: f64 },
    /// `S = (prod x)^(1/n)`; generates equal weights.
    GeometricMean,
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Generator::Constant { value } if !(value > 0.0 && value.is_finite()) => Err(
                Error::invalid("generator.value", format!("must be positive, got {value}")),
            ),
            Generator::Diversity { p } if !(p > 0.0 && p < 1.0) => Err(Error::invalid(
                "generator.p",
                format!("must lie in (0, 1), got {p}"),
            )),
            _ => Ok(()),
        }
    }

    fn guard_interior(&self, x: &[f64]) -> std::result::Result<(), DomainError> {
        if let Some((k, v)) = x.iter().enumerate().find(|(_, v)| !(**v >= INTERIOR_FLOOR)) {
            return Err(DomainError(format!(
                "ranked weight {} = {v:e} is outside the simplex interior",
                k + 1
            )));
        }
        Ok(())
    }
}

impl GeneratingFunction for Generator {
    fn name(&self) -> &str {
        match self {
            Generator::Constant { .. } => "constant",
            Generator::Entropy => "entropy",
            Generator::Diversity { .. } => "diversity",
            Generator::GeometricMean => "geometric_mean",
        }
    }

    fn value(&self, x: &[f64]) -> std::result::Result<f64, DomainError> {
        match *self {
            Generator::Constant { value } => Ok(value),
            Generator::Entropy => {
                self.guard_interior(x)?;
                Ok(-x.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum::<f64>())
            }
            Generator::Diversity { p } => {
                Ok(x.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p))
            }
            Generator::GeometricMean => {
                self.guard_interior(x)?;
                Ok((x.iter().map(|v| v.ln()).sum::<f64>() / x.len() as f64).exp())
            }
        }
    }

    fn log_gradient(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), DomainError> {
        match *self {
            Generator::Constant { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            Generator::Entropy => {
                let s = self.value(x)?;
                if !(s > 0.0) {
                    return Err(DomainError(format!("entropy {s:e} is not positive")));
                }
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -(v.ln() + 1.0) / s;
                }
            }
            Generator::Diversity { p } => {
                self.guard_interior(x)?;
                let total: f64 = x.iter().map(|v| v.powf(p)).sum();
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.powf(p - 1.0) / total;
                }
            }
            Generator::GeometricMean => {
                self.guard_interior(x)?;
                let n = x.len() as f64;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 1.0 / (n * v);
                }
            }
        }
        Ok(())
    }
}

/// Portfolio weights per (path, time); sums to one at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSeries(PathEnsemble);

impl WeightSeries {
    pub fn grid(&self) -> TimeGrid {
        self.0.grid()
    }

    pub fn num_assets(&self) -> usize {
        self.0.num_assets()
    }

    pub fn paths(&self) -> usize {
        self.0.paths()
    }

    /// Weight of `asset` over the grid.
    pub fn series(&self, path: usize, asset: usize) -> &[f64] {
        self.0.series(path, asset)
    }

    pub fn at(&self, path: usize, m: usize) -> Vec<f64> {
        self.0.column(path, m)
    }

    /// Largest `|sum_i w_i - 1|` over all grid points.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.paths() {
            for m in 0..self.grid().len() {
                let total: f64 = (0..self.num_assets()).map(|i| self.0.value(p, i, m)).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
        worst
    }

    pub fn as_ensemble(&self) -> &PathEnsemble {
        &self.0
    }
}

fn check_aligned(a: &PathEnsemble, b: &PathEnsemble) -> Result<()> {
    if a.grid() != b.grid() || a.num_assets() != b.num_assets() || a.paths() != b.paths() {
        return Err(Error::invalid(
            "alignment",
            "series must share grid, asset count and path count",
        ));
    }
    Ok(())
}

fn check_frames(frames: &RankFrame, e: &PathEnsemble) -> Result<()> {
    if frames.num_assets() != e.num_assets() || frames.paths() != e.paths() || frames.points() != e.grid().len() {
        return Err(Error::invalid("rank frames", "do not match the weight series"));
    }
    Ok(())
}

/// `mu_i = X_i / sum_j X_j` from log-capitalizations, shifted by the per-time max.
pub fn market_weights(log_caps: &PathEnsemble) -> WeightSeries {
    let n = log_caps.num_assets();
    let points = log_caps.grid().len();
    let block = n * points;
    let mut values = vec![0.0; log_caps.paths() * block];
    values.par_chunks_mut(block).enumerate().for_each(|(p, out)| {
        let mut e = vec![0.0; n];
        for m in 0..points {
            let top = (0..n)
                .map(|i| log_caps.value(p, i, m))
                .fold(f64::NEG_INFINITY, f64::max);
            for (i, slot) in e.iter_mut().enumerate() {
                *slot = (log_caps.value(p, i, m) - top).exp();
            }
            let total: f64 = e.iter().sum();
            for i in 0..n {
                out[i * points + m] = e[i] / total;
            }
        }
    });
    WeightSeries(
        PathEnsemble::new(log_caps.grid(), n, log_caps.paths(), values)
            .expect("normalized weights are finite"),
    )
}

/// Weights generated by `S` of the ranked market weights:
///
/// ```text
/// pi_{p(k)} = (D_k log S(mu_()) + 1 - sum_j mu_(j) D_j log S(mu_())) mu_(k)
/// ```
pub fn generated_weights(
    mu: &WeightSeries,
    frames: &RankFrame,
    generator: &dyn GeneratingFunction,
) -> Result<WeightSeries> {
    let ens = mu.as_ensemble();
    check_frames(frames, ens)?;
    let n = ens.num_assets();
    let points = ens.grid().len();
    let block = n * points;
    let mut values = vec![0.0; ens.paths() * block];
    let outcomes: Vec<Result<()>> = values
        .par_chunks_mut(block)
        .enumerate()
        .map(|(p, out)| {
            let mut ranked = vec![0.0; n];
            let mut grad = vec![0.0; n];
            for m in 0..points {
                let assets = frames.assets(p, m);
                for (k, &i) in assets.iter().enumerate() {
                    ranked[k] = ens.value(p, i as usize, m);
                }
                let fail = |reason: String| Error::Generator {
                    name: generator.name().to_string(),
                    path: p,
                    step: m,
                    reason,
                };
                let s = generator.value(&ranked).map_err(|e| fail(e.0))?;
                if !(s > 0.0) {
                    return Err(fail(format!("S = {s:e} is not positive")));
                }
                generator.log_gradient(&ranked, &mut grad).map_err(|e| fail(e.0))?;
                let shift = 1.0 - ranked.iter().zip(&grad).map(|(w, g)| w * g).sum::<f64>();
                for (k, &i) in assets.iter().enumerate() {
                    out[i as usize * points + m] = (grad[k] + shift) * ranked[k];
                }
            }
            Ok(())
        })
        .collect();
    outcomes.into_iter().collect::<Result<()>>()?;
    Ok(WeightSeries(PathEnsemble::new(ens.grid(), n, ens.paths(), values)?))
}

/// Relative log-return `log(Z_pi / Z_mu)` per path under discrete self-financing
/// rebalancing at the left endpoint of each step, with `Z_pi(0) = Z_mu(0)`.
///
/// Each step adds `log sum_i pi_i R_i - log sum_i mu_i R_i` with
/// `R_i = X_i(t_{m+1}) / X_i(t_m)`; the second sum is `Z_mu(t_{m+1}) / Z_mu(t_m)`.
pub fn relative_wealth(pi: &WeightSeries, log_caps: &PathEnsemble) -> Result<Vec<Vec<f64>>> {
    check_aligned(pi.as_ensemble(), log_caps)?;
    let mu = market_weights(log_caps);
    let n = log_caps.num_assets();
    let points = log_caps.grid().len();
    (0..log_caps.paths())
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(points);
            let mut acc = 0.0;
            out.push(acc);
            for m in 0..points - 1 {
                let mut gross_pi = 0.0;
                let mut gross_mu = 0.0;
                for i in 0..n {
                    let x = log_caps.series(p, i);
                    let ratio = (x[m + 1] - x[m]).exp();
                    gross_pi += pi.series(p, i)[m] * ratio;
                    gross_mu += mu.series(p, i)[m] * ratio;
                }
                if !(gross_pi > 0.0) {
                    return Err(Error::NonPositiveWealth {
                        path: p,
                        step: m,
                        gross: gross_pi,
                        weights: pi.at(p, m),
                    });
                }
                acc += gross_pi.ln() - gross_mu.ln();
                out.push(acc);
            }
            Ok(out)
        })
        .collect()
}

/// `sum_i int pi_i o d log mu_i` per path.
pub fn structural_process(pi: &WeightSeries, mu: &WeightSeries) -> Result<Vec<Vec<f64>>> {
    check_aligned(pi.as_ensemble(), mu.as_ensemble())?;
    let points = mu.grid().len();
    (0..mu.paths())
        .into_par_iter()
        .map(|p| {
            let mut total = vec![0.0; points];
            for i in 0..mu.num_assets() {
                let log_mu: Vec<f64> = mu.series(p, i).iter().map(|v| v.ln()).collect();
                let part = stratonovich_integral(pi.series(p, i), &log_mu)?;
                total.iter_mut().zip(&part.values).for_each(|(t, v)| *t += v);
            }
            Ok(total)
        })
        .collect()
}

/// Aligned decomposition series for one path; every series starts at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// `log(Z_pi / Z_mu)`.
    pub relative: Vec<f64>,
    /// `log S(mu_()(t)) - log S(mu_()(0))`.
    pub generating: Vec<f64>,
    pub structural: Vec<f64>,
    /// `relative - structural`.
    pub trading: Vec<f64>,
    /// `relative - generating`.
    pub theta: Vec<f64>,
}

/// Scalar diagnostics of one report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionMetrics {
    /// `sup_t |structural - generating|`.
    pub structural_residual: f64,
    pub structural_residual_end: f64,
    /// Realized quadratic variation of `theta`.
    pub theta_variation: f64,
    /// Realized quadratic variation of the relative log-return.
    pub relative_variation: f64,
    pub theta_end: f64,
}

impl DecompositionReport {
    pub fn metrics(&self) -> DecompositionMetrics {
        let gaps: Vec<f64> = self
            .structural
            .iter()
            .zip(&self.generating)
            .map(|(s, g)| (s - g).abs())
            .collect();
        DecompositionMetrics {
            structural_residual: gaps.iter().copied().fold(0.0, f64::max),
            structural_residual_end: *gaps.last().unwrap_or(&0.0),
            theta_variation: realized_variation(&self.theta),
            relative_variation: realized_variation(&self.relative),
            theta_end: *self.theta.last().unwrap_or(&0.0),
        }
    }
}

fn generating_log_change(
    mu: &WeightSeries,
    frames: &RankFrame,
    generator: &dyn GeneratingFunction,
    p: usize,
) -> Result<Vec<f64>> {
    let n = mu.num_assets();
    let mut ranked = vec![0.0; n];
    let mut out = Vec::with_capacity(mu.grid().len());
    let mut base = 0.0;
    for m in 0..mu.grid().len() {
        for (k, &i) in frames.assets(p, m).iter().enumerate() {
            ranked[k] = mu.series(p, i as usize)[m];
        }
        let s = generator.value(&ranked).map_err(|e| Error::Generator {
            name: generator.name().to_string(),
            path: p,
            step: m,
            reason: e.0,
        })?;
        if m == 0 {
            base = s.ln();
        }
        out.push(s.ln() - base);
    }
    Ok(out)
}

pub fn decompose(
    pi: &WeightSeries,
    mu: &WeightSeries,
    frames: &RankFrame,
    generator: &dyn GeneratingFunction,
    log_caps: &PathEnsemble,
) -> Result<Vec<DecompositionReport>> {
    check_frames(frames, mu.as_ensemble())?;
    let relative = relative_wealth(pi, log_caps)?;
    let structural = structural_process(pi, mu)?;
    relative
        .into_iter()
        .zip(structural)
        .enumerate()
        .map(|(p, (relative, structural))| {
            let generating = generating_log_change(mu, frames, generator, p)?;
            let trading = relative.iter().zip(&structural).map(|(r, s)| r - s).collect();
            let theta = relative.iter().zip(&generating).map(|(r, g)| r - g).collect();
            Ok(DecompositionReport {
                relative,
                generating,
                structural,
                trading,
                theta,
            })
        })
        .collect()
}
