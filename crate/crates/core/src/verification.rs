//! Pathwise residuals of the Stratonovich identities and coupled-grid
//! convergence studies.
//!
//! Every residual is measured as a sup over the grid, with the endpoint value
//! reported alongside. A convergence study draws Brownian increments once at
//! the finest level and sums them down to the coarser levels, so all levels
//! see the same underlying noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{sgn, stratonovich_integral};
use crate::error::{Error, Result};
use crate::paths::{Increments, PathEnsemble, RngSpec, TimeGrid};
use crate::portfolio::{decompose, generated_weights, market_weights, DecompositionMetrics, Generator};
use crate::rank::{coincidence_stats, occupation_indicator, ranked_ensemble, RankFrame};
use crate::sde::Model;
use crate::stats::{fit_log_log, RateFit, Summary};

/// Residuals below this are treated as round-off and excluded from rate fits.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// `|X(t)| - |X(0)| = int sgn(X) o dX`.
    Lemma2,
    /// `|X - Y|(t) - |X - Y|(0) = int sgn(X - Y) o dX - int sgn(X - Y) o dY`.
    Lemma3,
    /// Maximum of two processes.
    Lemma4Max,
    /// Minimum of two processes.
    Lemma4Min,
    /// `dX_(k) = sum_i 1{X_i = X_(k)} o dX_i`, every rank.
    Prop1,
    /// Structural process equals the generating-function log-change.
    Prop3,
}

impl Claim {
    pub fn name(&self) -> &'static str {
        match self {
            Claim::Lemma2 => "lemma2",
            Claim::Lemma3 => "lemma3",
            Claim::Lemma4Max => "lemma4_max",
            Claim::Lemma4Min => "lemma4_min",
            Claim::Prop1 => "prop1",
            Claim::Prop3 => "prop3",
        }
    }

    /// Processes a claim needs from the model.
    pub fn min_assets(&self) -> usize {
        match self {
            Claim::Lemma2 | Claim::Prop1 => 1,
            Claim::Prop3 => 2,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub sup: f64,
    pub endpoint: f64,
}

impl Residual {
    pub fn from_signed(series: &[f64]) -> Self {
        Self {
            sup: series.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())),
            endpoint: series.last().map_or(0.0, |v| v.abs()),
        }
    }
}

/// Per-path residuals of one claim (and one rank, for rank claims).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSeries {
    pub claim: Claim,
    pub rank: Option<usize>,
    pub residuals: Vec<Residual>,
}

impl ResidualSeries {
    pub fn summary(&self) -> Summary {
        Summary::of(&self.residuals.iter().map(|r| r.sup).collect::<Vec<_>>())
    }
}

/// `(target(t) - target(0)) - sum of integrals`, integrals added in order.
fn signed_residual(target: &[f64], integrals: &[Vec<f64>]) -> Vec<f64> {
    let start = target[0];
    (0..target.len())
        .map(|m| {
            let mut total = 0.0;
            for integral in integrals {
                total += integral[m];
            }
            (target[m] - start) - total
        })
        .collect()
}

fn strat(y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(stratonovich_integral(y, x)?.values)
}

pub fn verify_abs_representation(x: &[f64]) -> Result<Residual> {
    let signs: Vec<f64> = x.iter().map(|&v| sgn(v)).collect();
    let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    Ok(Residual::from_signed(&signed_residual(&abs, &[strat(&signs, x)?])))
}

pub fn verify_pair_difference(x: &[f64], y: &[f64]) -> Result<Residual> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let signs: Vec<f64> = diff.iter().map(|&d| sgn(d)).collect();
    let abs: Vec<f64> = diff.iter().map(|d| d.abs()).collect();
    let along_x = strat(&signs, x)?;
    let along_y = strat(&signs, y)?;
    let rhs: Vec<f64> = along_x.iter().zip(&along_y).map(|(a, b)| a - b).collect();
    Ok(Residual::from_signed(&signed_residual(&abs, &[rhs])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxResidual {
    pub max: Residual,
    pub min: Residual,
    /// Signed residual series; `signed_max + signed_min` vanishes up to round-off.
    pub signed_max: Vec<f64>,
    pub signed_min: Vec<f64>,
}

pub fn verify_minmax(x: &[f64], y: &[f64]) -> Result<MinMaxResidual> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    // x wins ties, matching the rank convention
    let x_top: Vec<f64> = x.iter().zip(y).map(|(a, b)| if a >= b { 1.0 } else { 0.0 }).collect();
    let y_top: Vec<f64> = x_top.iter().map(|v| 1.0 - v).collect();
    let upper: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| if a >= b { a } else { b }).collect();
    let lower: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| if a >= b { b } else { a }).collect();
    let signed_max = signed_residual(&upper, &[strat(&x_top, x)?, strat(&y_top, y)?]);
    let signed_min = signed_residual(&lower, &[strat(&y_top, x)?, strat(&x_top, y)?]);
    Ok(MinMaxResidual {
        max: Residual::from_signed(&signed_max),
        min: Residual::from_signed(&signed_min),
        signed_max,
        signed_min,
    })
}

/// `X_(k)(0) + sum_i int 1{r(i) = k} o dX_i` for every rank of one path.
pub fn rank_reconstruction(ensemble: &PathEnsemble, frames: &RankFrame, path: usize) -> Result<Vec<Vec<f64>>> {
    let n = ensemble.num_assets();
    let mut out = vec![vec![0.0; ensemble.grid().len()]; n];
    for i in 0..n {
        let x = ensemble.series(path, i);
        for (k, rec) in out.iter_mut().enumerate() {
            let part = strat(&occupation_indicator(frames, path, i, k), x)?;
            rec.iter_mut().zip(&part).for_each(|(r, v)| *r += v);
        }
    }
    for (k, rec) in out.iter_mut().enumerate() {
        let start = ensemble.value(path, frames.asset_at(path, 0, k), 0);
        rec.iter_mut().for_each(|r| *r += start);
    }
    Ok(out)
}

/// Residuals per path, then per rank (rank 0 is the largest).
pub fn verify_rank_representation(ensemble: &PathEnsemble, frames: &RankFrame) -> Result<Vec<Vec<Residual>>> {
    let (ranked, _) = ranked_ensemble(ensemble);
    let n = ensemble.num_assets();
    (0..ensemble.paths())
        .into_par_iter()
        .map(|p| {
            let indicators: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|k| (0..n).map(|i| occupation_indicator(frames, p, i, k)).collect())
                .collect();
            (0..n)
                .map(|k| {
                    let integrals = (0..n)
                        .map(|i| strat(&indicators[k][i], ensemble.series(p, i)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Residual::from_signed(&signed_residual(ranked.series(p, k), &integrals)))
                })
                .collect()
        })
        .collect()
}

fn single_path_error(err: Error, path: usize) -> Error {
    match err {
        Error::NonFinite { asset, step, .. } => Error::NonFinite { path, asset, step },
        Error::Generator { name, step, reason, .. } => Error::Generator {
            name,
            path,
            step,
            reason,
        },
        Error::NonPositiveWealth { step, gross, weights, .. } => Error::NonPositiveWealth {
            path,
            step,
            gross,
            weights,
        },
        other => other,
    }
}

/// Residuals of `claim` on every path of `ensemble`: one entry per path, each
/// holding one residual (or one per rank for [`Claim::Prop1`]).
pub fn claim_residuals(claim: Claim, ensemble: &PathEnsemble, generator: &Generator) -> Result<Vec<Vec<Residual>>> {
    if ensemble.num_assets() < claim.min_assets() {
        return Err(Error::invalid(
            "model",
            format!("{} needs at least {} processes", claim.name(), claim.min_assets()),
        ));
    }
    match claim {
        Claim::Prop1 => {
            let (_, frames) = ranked_ensemble(ensemble);
            verify_rank_representation(ensemble, &frames)
        }
        Claim::Prop3 => {
            generator.validate()?;
            let (_, frames) = ranked_ensemble(ensemble);
            let mu = market_weights(ensemble);
            let pi = generated_weights(&mu, &frames, generator)?;
            let reports = decompose(&pi, &mu, &frames, generator, ensemble)?;
            Ok(reports
                .iter()
                .map(|r| {
                    let m = r.metrics();
                    vec![Residual {
                        sup: m.structural_residual,
                        endpoint: m.structural_residual_end,
                    }]
                })
                .collect())
        }
        _ => (0..ensemble.paths())
            .into_par_iter()
            .map(|p| {
                let x = ensemble.series(p, 0);
                Ok(vec![match claim {
                    Claim::Lemma2 => verify_abs_representation(x)?,
                    Claim::Lemma3 => verify_pair_difference(x, ensemble.series(p, 1))?,
                    Claim::Lemma4Max => verify_minmax(x, ensemble.series(p, 1))?.max,
                    _ => verify_minmax(x, ensemble.series(p, 1))?.min,
                }])
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelStats {
    pub steps: usize,
    pub step_size: f64,
    pub mean_residual: f64,
    pub max_residual: f64,
    pub std_error: f64,
    pub mean_endpoint_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub claim: String,
    pub paths: usize,
    pub levels: Vec<LevelStats>,
    /// Slope of log mean residual against log step size.
    pub fitted_rate: Option<RateFit>,
}

impl ConvergenceReport {
    fn from_levels(claim: String, paths: usize, levels: Vec<LevelStats>) -> Self {
        let means: Vec<f64> = levels.iter().map(|l| l.mean_residual).collect();
        let steps: Vec<f64> = levels.iter().map(|l| l.step_size).collect();
        let fitted_rate = if means.iter().all(|&m| m > ROUNDOFF_FLOOR) {
            fit_log_log(&steps, &means)
        } else {
            None
        };
        Self {
            claim,
            paths,
            levels,
            fitted_rate,
        }
    }

    pub fn mean_residuals(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mean_residual).collect()
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.step_size).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].mean_residual < w[0].mean_residual)
    }

    /// Decrease allowing `slack` combined standard errors at each level pair.
    pub fn decreasing_within(&self, slack: f64) -> bool {
        self.levels.windows(2).all(|w| {
            let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].mean_residual < w[0].mean_residual + slack * se
        })
    }
}

/// Stats of per-path residuals at one level. For multi-component claims the
/// reported mean is the largest per-component mean, with that component's
/// standard error; the max runs over paths and components.
fn level_stats(grid: TimeGrid, per_path: &[Vec<Residual>]) -> LevelStats {
    let components = per_path.first().map_or(0, |r| r.len());
    let mut best: Option<(Summary, f64)> = None;
    let mut max = 0.0f64;
    for c in 0..components {
        let sups: Vec<f64> = per_path.iter().map(|r| r[c].sup).collect();
        let ends: Vec<f64> = per_path.iter().map(|r| r[c].endpoint).collect();
        let s = Summary::of(&sups);
        max = max.max(s.max);
        if best.is_none_or(|(b, _)| s.mean > b.mean) {
            best = Some((s, Summary::of(&ends).mean));
        }
    }
    let (s, end) = best.expect("at least one residual component");
    LevelStats {
        steps: grid.steps(),
        step_size: grid.step(),
        mean_residual: s.mean,
        max_residual: max,
        std_error: s.std_error,
        mean_endpoint_residual: end,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionLevel {
    pub steps: usize,
    pub step_size: f64,
    pub structural_residual: Summary,
    pub theta_variation: Summary,
    pub relative_variation: Summary,
    pub theta_end: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionConvergence {
    pub levels: Vec<DecompositionLevel>,
    pub residual_rate: Option<RateFit>,
    pub theta_variation_rate: Option<RateFit>,
}

/// Aggregate decomposition diagnostics across refinement levels.
pub fn verify_decomposition(levels: &[(TimeGrid, Vec<DecompositionMetrics>)]) -> DecompositionConvergence {
    let levels: Vec<DecompositionLevel> = levels
        .iter()
        .map(|(grid, metrics)| {
            let pick = |f: fn(&DecompositionMetrics) -> f64| Summary::of(&metrics.iter().map(f).collect::<Vec<_>>());
            DecompositionLevel {
                steps: grid.steps(),
                step_size: grid.step(),
                structural_residual: pick(|m| m.structural_residual),
                theta_variation: pick(|m| m.theta_variation),
                relative_variation: pick(|m| m.relative_variation),
                theta_end: pick(|m| m.theta_end),
            }
        })
        .collect();
    let steps: Vec<f64> = levels.iter().map(|l| l.step_size).collect();
    let fit = |ys: Vec<f64>| {
        if ys.iter().all(|&y| y > ROUNDOFF_FLOOR) {
            fit_log_log(&steps, &ys)
        } else {
            None
        }
    };
    DecompositionConvergence {
        residual_rate: fit(levels.iter().map(|l| l.structural_residual.mean).collect()),
        theta_variation_rate: fit(levels.iter().map(|l| l.theta_variation.mean).collect()),
        levels,
    }
}

/// Coupled multi-level Monte Carlo over one model.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub model: Model,
    pub horizon: f64,
    /// Step counts, coarsest first; each must divide the finest.
    pub levels: Vec<usize>,
    pub paths: usize,
    pub rng: RngSpec,
    /// Used by [`Claim::Prop3`] and decomposition studies.
    pub generator: Generator,
}

impl ConvergenceStudy {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.levels.len() < 3 {
            return Err(Error::invalid(
                "levels",
                format!("need at least 3 refinement levels, got {}", self.levels.len()),
            ));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("levels", "step counts must be strictly increasing"));
        }
        let finest = *self.levels.last().unwrap();
        if let Some(l) = self.levels.iter().find(|&&l| !finest.is_multiple_of(l)) {
            return Err(Error::invalid(
                "levels",
                format!("{l} steps does not divide the finest level {finest}"),
            ));
        }
        if self.paths == 0 {
            return Err(Error::invalid("paths", "need at least one path"));
        }
        for &l in &self.levels {
            TimeGrid::new(self.horizon, l)?;
        }
        Ok(())
    }

    pub fn grids(&self) -> Result<Vec<TimeGrid>> {
        self.levels.iter().map(|&l| TimeGrid::new(self.horizon, l)).collect()
    }

    /// Simulate every path at every level from shared fine increments and
    /// evaluate `eval` on each single-path ensemble. Output is `[path][level]`.
    pub fn run_levels<T, F>(&self, eval: F) -> Result<Vec<Vec<T>>>
    where
        T: Send,
        F: Fn(&PathEnsemble) -> Result<T> + Sync,
    {
        self.validate()?;
        let finest = *self.levels.last().unwrap();
        let fine_grid = TimeGrid::new(self.horizon, finest)?;
        let n = self.model.num_assets();
        let outcomes: Vec<Result<Vec<T>>> = (0..self.paths)
            .into_par_iter()
            .map(|p| {
                let fine = Increments::generate_path(&self.rng, fine_grid, n, p)?;
                self.levels
                    .iter()
                    .map(|&l| {
                        let increments = fine.coarsen(finest / l)?;
                        let ens = self.model.simulate_with(&increments)?;
                        eval(&ens)
                    })
                    .collect::<Result<Vec<T>>>()
                    .map_err(|e| single_path_error(e, p))
            })
            .collect();
        outcomes.into_iter().collect()
    }

    fn by_level<T: Clone>(per_path: &[Vec<T>], level: usize) -> Vec<T> {
        per_path.iter().map(|row| row[level].clone()).collect()
    }

    pub fn run(&self, claim: Claim) -> Result<ConvergenceReport> {
        let per_path = self.run_levels(|ens| {
            Ok(claim_residuals(claim, ens, &self.generator)?.swap_remove(0))
        })?;
        let grids = self.grids()?;
        let levels = grids
            .iter()
            .enumerate()
            .map(|(l, &grid)| level_stats(grid, &Self::by_level(&per_path, l)))
            .collect();
        Ok(ConvergenceReport::from_levels(claim.name().to_string(), self.paths, levels))
    }

    pub fn run_decomposition(&self) -> Result<DecompositionConvergence> {
        self.generator.validate()?;
        if self.model.num_assets() < 2 {
            return Err(Error::invalid("model", "decomposition needs at least 2 assets"));
        }
        let per_path = self.run_levels(|ens| {
            let (_, frames) = ranked_ensemble(ens);
            let mu = market_weights(ens);
            let pi = generated_weights(&mu, &frames, &self.generator)?;
            Ok(decompose(&pi, &mu, &frames, &self.generator, ens)?[0].metrics())
        })?;
        let grids = self.grids()?;
        let levels: Vec<(TimeGrid, Vec<DecompositionMetrics>)> = grids
            .iter()
            .enumerate()
            .map(|(l, &grid)| (grid, Self::by_level(&per_path, l)))
            .collect();
        Ok(verify_decomposition(&levels))
    }

    /// Fraction of grid time with `|X_i - X_j| < sqrt(h)`, per level.
    pub fn run_band_occupation(&self, i: usize, j: usize) -> Result<ConvergenceReport> {
        let n = self.model.num_assets();
        if i == j || i >= n || j >= n {
            return Err(Error::invalid("pair", format!("({i}, {j}) is not a pair of distinct assets")));
        }
        let per_path = self.run_levels(|ens| {
            let band = ens.grid().step().sqrt();
            let stats = coincidence_stats(ens, band)?;
            let f = stats.pair(i, j).expect("pair exists").band_occupation;
            Ok(vec![Residual { sup: f, endpoint: f }])
        })?;
        let grids = self.grids()?;
        let levels = grids
            .iter()
            .enumerate()
            .map(|(l, &grid)| level_stats(grid, &Self::by_level(&per_path, l)))
            .collect();
        Ok(ConvergenceReport::from_levels(
            format!("band_occupation_{}_{}", i + 1, j + 1),
            self.paths,
            levels,
        ))
    }
}

pub fn convergence_study(
    claim: Claim,
    model: &Model,
    horizon: f64,
    levels: &[usize],
    paths: usize,
    rng: &RngSpec,
    generator: &Generator,
) -> Result<ConvergenceReport> {
    ConvergenceStudy {
        model: model.clone(),
        horizon,
        levels: levels.to_vec(),
        paths,
        rng: *rng,
        generator: generator.clone(),
    }
    .run(claim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::build_grid;

    #[test]
    fn lemma2_trivial_cases() {
        let pos = [0.5, 0.7, 0.2, 1.0];
        assert!(verify_abs_representation(&pos).unwrap().sup < 1e-15);
        let zero = [0.0; 6];
        assert_eq!(verify_abs_representation(&zero).unwrap().sup, 0.0);
        let neg = [-0.5, -0.7, -0.2, -1.0];
        assert!(verify_abs_representation(&neg).unwrap().sup < 1e-15);
    }

    #[test]
    fn lemma2_crossing_step_error() {
        // one crossing: midpoint sum contributes 0, |X| changes by 0.3 - 0.2
        let x = [0.2, -0.3];
        let r = verify_abs_representation(&x).unwrap();
        assert!((r.sup - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lemma3_reductions() {
        let x = [0.1, -0.2, 0.4, 0.3, -0.1];
        let zero = [0.0; 5];
        assert_eq!(verify_pair_difference(&x, &zero).unwrap(), verify_abs_representation(&x).unwrap());
        assert_eq!(verify_pair_difference(&x, &x).unwrap().sup, 0.0);
    }

    #[test]
    fn minmax_without_crossings_and_complement() {
        let x = [1.0, 1.3, 1.1, 1.6];
        let y = [0.0, 0.2, -0.4, 0.1];
        let r = verify_minmax(&x, &y).unwrap();
        assert!(r.max.sup < 1e-15 && r.min.sup < 1e-15);
        let x = [0.0, 0.3, -0.2, 0.5, 0.1];
        let y = [0.1, 0.0, 0.2, 0.4, 0.6];
        let r = verify_minmax(&x, &y).unwrap();
        assert!(r.max.sup > 0.0);
        for (a, b) in r.signed_max.iter().zip(&r.signed_min) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_process_rank_residual_vanishes() {
        let grid = build_grid(1.0, 4).unwrap();
        let ens = PathEnsemble::from_series(grid, &[vec![0.0, 0.3, -0.2, 0.5, 0.1]]).unwrap();
        let (_, frames) = ranked_ensemble(&ens);
        let r = verify_rank_representation(&ens, &frames).unwrap();
        assert!(r[0][0].sup < 1e-15);
    }

    #[test]
    fn study_validation() {
        let model = Model::Brownian { n: 1, sigma: 1.0 };
        let base = ConvergenceStudy {
            model,
            horizon: 1.0,
            levels: vec![4, 16],
            paths: 2,
            rng: RngSpec::new(0),
            generator: Generator::Entropy,
        };
        assert!(base.validate().is_err());
        let bad_divisor = ConvergenceStudy {
            levels: vec![4, 6, 16],
            ..base.clone()
        };
        assert!(bad_divisor.validate().is_err());
        let unordered = ConvergenceStudy {
            levels: vec![16, 4, 64],
            ..base.clone()
        };
        assert!(unordered.validate().is_err());
        let ok = ConvergenceStudy {
            levels: vec![4, 16, 64],
            ..base
        };
        assert!(ok.validate().is_ok());
        assert!(ok.run(Claim::Lemma3).is_err());
    }
}
