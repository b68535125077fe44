//! Experiments: each one turns a validated config into named artifacts.

use atlas_core::calculus::{local_time_residual, sgn_series, stratonovich_integral};
use atlas_core::portfolio::{decompose, generated_weights, market_weights, DecompositionReport};
use atlas_core::rank::{coincidence_stats, CoincidenceStats};
use atlas_core::stats::{RateFit, Summary};
use atlas_core::verification::{
    rank_reconstruction, verify_abs_representation, verify_minmax, verify_pair_difference,
    verify_rank_representation, ConvergenceReport, DecompositionConvergence, Residual,
};
use atlas_core::{ranked_ensemble, ConvergenceStudy, Error as CoreError, Model, PathEnsemble, RngSpec};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{Experiment, StudyTarget, Validated};
use crate::output::{Cell, Table};

pub enum Artifact {
    Csv(Table),
    Json(Value),
}

/// File name and contents, in write order.
pub type Artifacts = Vec<(String, Artifact)>;

type Outcome = Result<Artifacts, CoreError>;

/// Residual statistics of one claim component over all paths.
struct Component {
    claim: String,
    sups: Vec<f64>,
    ends: Vec<f64>,
}

impl Component {
    fn new(claim: impl Into<String>, residuals: impl Iterator<Item = Residual>) -> Self {
        let (sups, ends) = residuals.map(|r| (r.sup, r.endpoint)).unzip();
        Self {
            claim: claim.into(),
            sups,
            ends,
        }
    }

    fn stats(&self) -> (Summary, Summary) {
        (Summary::of(&self.sups), Summary::of(&self.ends))
    }

    fn to_json(&self) -> Value {
        let (s, e) = self.stats();
        json!({
            "claim": self.claim,
            "mean_residual": s.mean,
            "max_residual": s.max,
            "std_error": s.std_error,
            "mean_endpoint_residual": e.mean,
        })
    }
}

fn residual_table(components: &[Component]) -> Table {
    let mut t = Table::new(["path_id", "claim", "sup_residual", "endpoint_residual"]);
    let paths = components.first().map_or(0, |c| c.sups.len());
    for p in 0..paths {
        for c in components {
            t.push(vec![p.into(), c.claim.as_str().into(), c.sups[p].into(), c.ends[p].into()]);
        }
    }
    t
}

fn base_summary(cfg: &Validated, experiment: Experiment) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("experiment".into(), json!(experiment.name()));
    m.insert("config".into(), serde_json::to_value(cfg.raw.echo()).expect("config serializes"));
    m
}

/// Single-level summary; the headline statistics are those of the component
/// with the largest mean residual.
fn residual_summary(cfg: &Validated, experiment: Experiment, claim: &str, components: &[Component]) -> Map<String, Value> {
    let mut m = base_summary(cfg, experiment);
    let worst = components
        .iter()
        .map(Component::stats)
        .fold(None::<(Summary, Summary)>, |best, cur| match best {
            Some(b) if b.0.mean >= cur.0.mean => Some(b),
            _ => Some(cur),
        })
        .expect("at least one component");
    let max = components.iter().map(|c| c.stats().0.max).fold(0.0, f64::max);
    m.insert("claim".into(), json!(claim));
    m.insert("paths".into(), json!(cfg.paths));
    m.insert("levels".into(), json!([cfg.grid.steps()]));
    m.insert("step_sizes".into(), json!([cfg.grid.step()]));
    m.insert("mean_residual".into(), json!([worst.0.mean]));
    m.insert("max_residual".into(), json!([max]));
    m.insert("std_error".into(), json!([worst.0.std_error]));
    m.insert("mean_endpoint_residual".into(), json!([worst.1.mean]));
    m.insert("fitted_rate".into(), Value::Null);
    m.insert("components".into(), Value::Array(components.iter().map(Component::to_json).collect()));
    m
}

fn rate_fields(m: &mut Map<String, Value>, key: &str, fit: Option<RateFit>) {
    m.insert(key.into(), json!(fit.map(|f| f.slope)));
    m.insert(format!("{key}_intercept"), json!(fit.map(|f| f.intercept)));
}

fn series_table(names: &[String], ens_times: &[f64], paths: usize, value: impl Fn(usize, usize, usize) -> f64) -> Table {
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend(names.iter().cloned());
    let mut t = Table::new(header);
    for p in 0..paths {
        for (m, &time) in ens_times.iter().enumerate() {
            let mut row: Vec<Cell> = vec![p.into(), time.into()];
            row.extend((0..names.len()).map(|c| Cell::Float(value(p, c, m))));
            t.push(row);
        }
    }
    t
}

fn per_path<T: Send>(paths: usize, f: impl Fn(usize) -> Result<T, CoreError> + Sync + Send) -> Result<Vec<T>, CoreError> {
    (0..paths).into_par_iter().map(f).collect()
}

pub fn simulate_ensemble(cfg: &Validated) -> Result<PathEnsemble, CoreError> {
    cfg.model.simulate(cfg.grid, &RngSpec::new(cfg.master_seed), cfg.paths)
}

fn simulate(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let n = ens.num_assets();
    let (ranked, _) = ranked_ensemble(ens);
    let mut names: Vec<String> = (1..=n).map(|i| format!("log_x{i}")).collect();
    names.extend((1..=n).map(|k| format!("log_x_rank{k}")));
    let table = series_table(&names, &cfg.grid.times(), ens.paths(), |p, c, m| {
        if c < n {
            ens.value(p, c, m)
        } else {
            ranked.value(p, c - n, m)
        }
    });
    let last = cfg.grid.steps();
    let sums: Vec<f64> = (0..ens.paths())
        .map(|p| (0..n).map(|i| ens.value(p, i, last) - ens.value(p, i, 0)).sum())
        .collect();
    let s = Summary::of(&sums);
    let total_variance = match &cfg.model {
        Model::Brownian { n, sigma } => *n as f64 * sigma * sigma,
        Model::Atlas(p) => p.n() as f64 * p.sigma() * p.sigma(),
        Model::RankBased(p) => p.sigmas().iter().map(|s| s * s).sum(),
    } * cfg.grid.horizon();
    let mut m = base_summary(cfg, Experiment::Simulate);
    m.insert("paths".into(), json!(ens.paths()));
    m.insert("levels".into(), json!([cfg.grid.steps()]));
    m.insert(
        "log_sum_change".into(),
        json!({
            "mean": s.mean,
            "variance": s.variance,
            "std_error": s.std_error,
            "expected_variance": total_variance,
        }),
    );
    Ok(vec![
        ("simulate_paths.csv".into(), Artifact::Csv(table)),
        ("simulate_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn lemma2(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    struct PathOut {
        residual: Residual,
        strat: Vec<f64>,
        standard: Vec<f64>,
        literal: Vec<f64>,
    }
    let rows = per_path(ens.paths(), |p| {
        let x = ens.series(p, 0);
        let lt = local_time_residual(x)?;
        Ok(PathOut {
            residual: verify_abs_representation(x)?,
            strat: stratonovich_integral(&sgn_series(x), x)?.values,
            standard: lt.standard,
            literal: lt.literal,
        })
    })?;
    let comp = [Component::new("lemma2", rows.iter().map(|r| r.residual))];
    let names: Vec<String> = ["x", "abs_change", "stratonovich_sgn", "local_time", "local_time_literal"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let series = series_table(&names, &cfg.grid.times(), ens.paths(), |p, c, m| {
        let x = ens.series(p, 0);
        match c {
            0 => x[m],
            1 => x[m].abs() - x[0].abs(),
            2 => rows[p].strat[m],
            3 => rows[p].standard[m],
            _ => rows[p].literal[m],
        }
    });
    let ends: Vec<f64> = rows.iter().map(|r| *r.standard.last().unwrap()).collect();
    let lit: Vec<f64> = rows.iter().map(|r| *r.literal.last().unwrap()).collect();
    let (ls, ll) = (Summary::of(&ends), Summary::of(&lit));
    let mut m = residual_summary(cfg, Experiment::VerifyLemma2, "lemma2", &comp);
    m.insert(
        "local_time_at_horizon".into(),
        json!({
            "mean": ls.mean,
            "std_error": ls.std_error,
            "literal_mean": ll.mean,
            "literal_std_error": ll.std_error,
        }),
    );
    Ok(vec![
        ("lemma2_residuals.csv".into(), Artifact::Csv(residual_table(&comp))),
        ("lemma2_series.csv".into(), Artifact::Csv(series)),
        ("lemma2_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn lemma3(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let rs = per_path(ens.paths(), |p| verify_pair_difference(ens.series(p, 0), ens.series(p, 1)))?;
    let comp = [Component::new("lemma3", rs.into_iter())];
    let m = residual_summary(cfg, Experiment::VerifyLemma3, "lemma3", &comp);
    Ok(vec![
        ("lemma3_residuals.csv".into(), Artifact::Csv(residual_table(&comp))),
        ("lemma3_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn lemma4(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let rs = per_path(ens.paths(), |p| verify_minmax(ens.series(p, 0), ens.series(p, 1)))?;
    let complement = rs
        .iter()
        .flat_map(|r| r.signed_max.iter().zip(&r.signed_min).map(|(a, b)| (a + b).abs()))
        .fold(0.0, f64::max);
    let comp = [
        Component::new("lemma4_max", rs.iter().map(|r| r.max)),
        Component::new("lemma4_min", rs.iter().map(|r| r.min)),
    ];
    let mut m = residual_summary(cfg, Experiment::VerifyLemma4, "lemma4", &comp);
    m.insert("max_complement_error".into(), json!(complement));
    Ok(vec![
        ("lemma4_residuals.csv".into(), Artifact::Csv(residual_table(&comp))),
        ("lemma4_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn rank_components(ens: &PathEnsemble) -> Result<(Vec<Component>, f64), CoreError> {
    let (ranked, frames) = ranked_ensemble(ens);
    let per_path = verify_rank_representation(ens, &frames)?;
    let n = ens.num_assets();
    let last = ens.grid().steps();
    let sum_errors = per_path_errors(ens, &ranked, &frames, last)?;
    let components = (0..n)
        .map(|k| Component::new(format!("prop1_k{}", k + 1), per_path.iter().map(|r| r[k])))
        .collect();
    Ok((components, sum_errors))
}

fn per_path_errors(
    ens: &PathEnsemble,
    ranked: &PathEnsemble,
    frames: &atlas_core::RankFrame,
    last: usize,
) -> Result<f64, CoreError> {
    let n = ens.num_assets();
    let errs = per_path(ens.paths(), |p| {
        let rec = rank_reconstruction(ens, frames, p)?;
        let lhs: f64 = rec.iter().map(|r| r[last]).sum();
        let rhs: f64 = (0..n).map(|i| ens.value(p, i, last) - ens.value(p, i, 0)).sum::<f64>()
            + (0..n).map(|k| ranked.value(p, k, 0)).sum::<f64>();
        Ok((lhs - rhs).abs())
    })?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

fn prop1(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let (comp, sum_error) = rank_components(ens)?;
    let mut m = residual_summary(cfg, Experiment::VerifyProp1, "prop1", &comp);
    m.insert("max_sum_consistency_error".into(), json!(sum_error));
    Ok(vec![
        ("prop1_residuals.csv".into(), Artifact::Csv(residual_table(&comp))),
        ("prop1_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn prop3(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let (_, frames) = ranked_ensemble(ens);
    let mu = market_weights(ens);
    let pi = generated_weights(&mu, &frames, &cfg.generator)?;
    let reports: Vec<DecompositionReport> = decompose(&pi, &mu, &frames, &cfg.generator, ens)?;
    let metrics: Vec<_> = reports.iter().map(DecompositionReport::metrics).collect();
    let comp = [Component::new(
        "prop3",
        metrics.iter().map(|m| Residual {
            sup: m.structural_residual,
            endpoint: m.structural_residual_end,
        }),
    )];
    let names: Vec<String> = ["relative", "generating", "structural", "trading", "theta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let series = series_table(&names, &cfg.grid.times(), ens.paths(), |p, c, m| {
        let r = &reports[p];
        [&r.relative, &r.generating, &r.structural, &r.trading, &r.theta][c][m]
    });
    let pick = |f: fn(&atlas_core::portfolio::DecompositionMetrics) -> f64| {
        let s = Summary::of(&metrics.iter().map(f).collect::<Vec<_>>());
        json!({"mean": s.mean, "std_error": s.std_error, "max": s.max})
    };
    let mut m = residual_summary(cfg, Experiment::VerifyProp3, "prop3", &comp);
    m.insert("generator".into(), serde_json::to_value(&cfg.generator).expect("generator serializes"));
    m.insert("theta_variation".into(), pick(|m| m.theta_variation));
    m.insert("relative_variation".into(), pick(|m| m.relative_variation));
    m.insert("theta_end".into(), pick(|m| m.theta_end));
    m.insert("max_weight_normalization_error".into(), json!(pi.max_normalization_error()));
    Ok(vec![
        ("prop3_residuals.csv".into(), Artifact::Csv(residual_table(&comp))),
        ("prop3_decomposition.csv".into(), Artifact::Csv(series)),
        ("prop3_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn report_artifacts(cfg: &Validated, report: &ConvergenceReport) -> Artifacts {
    let mut t = Table::new([
        "steps",
        "step_size",
        "mean_residual",
        "max_residual",
        "std_error",
        "mean_endpoint_residual",
    ]);
    for l in &report.levels {
        t.push(vec![
            l.steps.into(),
            l.step_size.into(),
            l.mean_residual.into(),
            l.max_residual.into(),
            l.std_error.into(),
            l.mean_endpoint_residual.into(),
        ]);
    }
    let mut m = base_summary(cfg, Experiment::Convergence);
    let col = |f: fn(&atlas_core::verification::LevelStats) -> f64| report.levels.iter().map(f).collect::<Vec<_>>();
    m.insert("claim".into(), json!(report.claim));
    m.insert("paths".into(), json!(report.paths));
    m.insert("levels".into(), json!(report.levels.iter().map(|l| l.steps).collect::<Vec<_>>()));
    m.insert("step_sizes".into(), json!(col(|l| l.step_size)));
    m.insert("mean_residual".into(), json!(col(|l| l.mean_residual)));
    m.insert("max_residual".into(), json!(col(|l| l.max_residual)));
    m.insert("std_error".into(), json!(col(|l| l.std_error)));
    m.insert("mean_endpoint_residual".into(), json!(col(|l| l.mean_endpoint_residual)));
    rate_fields(&mut m, "fitted_rate", report.fitted_rate);
    m.insert("strictly_decreasing".into(), json!(report.strictly_decreasing()));
    m.insert("decreasing_within_5_se".into(), json!(report.decreasing_within(5.0)));
    vec![
        ("convergence_levels.csv".into(), Artifact::Csv(t)),
        ("convergence_summary.json".into(), Artifact::Json(Value::Object(m))),
    ]
}

fn decomposition_artifacts(cfg: &Validated, d: &DecompositionConvergence, paths: usize) -> Artifacts {
    let mut t = Table::new([
        "steps",
        "step_size",
        "structural_residual_mean",
        "structural_residual_max",
        "structural_residual_std_error",
        "theta_variation_mean",
        "theta_variation_std_error",
        "relative_variation_mean",
        "relative_variation_std_error",
        "theta_end_mean",
        "theta_end_std_error",
    ]);
    for l in &d.levels {
        t.push(vec![
            l.steps.into(),
            l.step_size.into(),
            l.structural_residual.mean.into(),
            l.structural_residual.max.into(),
            l.structural_residual.std_error.into(),
            l.theta_variation.mean.into(),
            l.theta_variation.std_error.into(),
            l.relative_variation.mean.into(),
            l.relative_variation.std_error.into(),
            l.theta_end.mean.into(),
            l.theta_end.std_error.into(),
        ]);
    }
    let mut m = base_summary(cfg, Experiment::Convergence);
    m.insert("claim".into(), json!("decomposition"));
    m.insert("paths".into(), json!(paths));
    m.insert("generator".into(), serde_json::to_value(&cfg.generator).expect("generator serializes"));
    m.insert("levels".into(), json!(d.levels.iter().map(|l| l.steps).collect::<Vec<_>>()));
    m.insert("step_sizes".into(), json!(d.levels.iter().map(|l| l.step_size).collect::<Vec<_>>()));
    m.insert(
        "mean_residual".into(),
        json!(d.levels.iter().map(|l| l.structural_residual.mean).collect::<Vec<_>>()),
    );
    m.insert(
        "max_residual".into(),
        json!(d.levels.iter().map(|l| l.structural_residual.max).collect::<Vec<_>>()),
    );
    m.insert(
        "std_error".into(),
        json!(d.levels.iter().map(|l| l.structural_residual.std_error).collect::<Vec<_>>()),
    );
    m.insert(
        "theta_variation".into(),
        json!(d.levels.iter().map(|l| l.theta_variation.mean).collect::<Vec<_>>()),
    );
    m.insert(
        "relative_variation".into(),
        json!(d.levels.iter().map(|l| l.relative_variation.mean).collect::<Vec<_>>()),
    );
    m.insert("theta_end".into(), json!(d.levels.iter().map(|l| l.theta_end.mean).collect::<Vec<_>>()));
    rate_fields(&mut m, "fitted_rate", d.residual_rate);
    rate_fields(&mut m, "theta_variation_rate", d.theta_variation_rate);
    vec![
        ("convergence_levels.csv".into(), Artifact::Csv(t)),
        ("convergence_summary.json".into(), Artifact::Json(Value::Object(m))),
    ]
}

fn convergence(cfg: &Validated) -> Outcome {
    let (target, levels) = cfg.study.clone().expect("validated convergence section");
    let study = ConvergenceStudy {
        model: cfg.model.clone(),
        horizon: cfg.grid.horizon(),
        levels,
        paths: cfg.paths,
        rng: RngSpec::new(cfg.master_seed),
        generator: cfg.generator.clone(),
    };
    Ok(match target {
        StudyTarget::Claim(claim) => report_artifacts(cfg, &study.run(claim)?),
        StudyTarget::BandOccupation => report_artifacts(cfg, &study.run_band_occupation(0, 1)?),
        StudyTarget::Decomposition => decomposition_artifacts(cfg, &study.run_decomposition()?, cfg.paths),
    })
}

fn pair_table(stats: &CoincidenceStats) -> Table {
    let mut t = Table::new([
        "asset_i",
        "asset_j",
        "ties",
        "sign_changes",
        "band_occupation",
        "band_occupation_std_error",
    ]);
    for s in &stats.pairs {
        t.push(vec![
            (s.i + 1).into(),
            (s.j + 1).into(),
            Cell::Int(s.ties),
            Cell::Int(s.sign_changes),
            s.band_occupation.into(),
            s.band_occupation_std_error.into(),
        ]);
    }
    t
}

fn coincidence(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let stats = coincidence_stats(ens, cfg.band)?;
    let mut m = base_summary(cfg, Experiment::Coincidence);
    m.insert("paths".into(), json!(ens.paths()));
    m.insert("levels".into(), json!([cfg.grid.steps()]));
    m.insert("band".into(), json!(stats.band));
    m.insert("grid_points".into(), json!(stats.grid_points));
    m.insert("triple_points".into(), json!(stats.triple_points));
    m.insert("pairs".into(), serde_json::to_value(&stats.pairs).expect("pairs serialize"));
    Ok(vec![
        ("coincidence_pairs.csv".into(), Artifact::Csv(pair_table(&stats))),
        ("coincidence_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

fn remark_probe(cfg: &Validated, ens: &PathEnsemble) -> Outcome {
    let (comp, sum_error) = rank_components(ens)?;
    let stats = coincidence_stats(ens, cfg.band)?;
    let mut m = residual_summary(cfg, Experiment::RemarkProbe, "prop1", &comp);
    m.insert("max_sum_consistency_error".into(), json!(sum_error));
    m.insert("band".into(), json!(stats.band));
    m.insert("grid_points".into(), json!(stats.grid_points));
    m.insert("triple_points".into(), json!(stats.triple_points));
    m.insert("pairs".into(), serde_json::to_value(&stats.pairs).expect("pairs serialize"));
    Ok(vec![
        ("remark_probe_residuals.csv".into(), Artifact::Csv(residual_table(&comp))),
        ("remark_probe_pairs.csv".into(), Artifact::Csv(pair_table(&stats))),
        ("remark_probe_summary.json".into(), Artifact::Json(Value::Object(m))),
    ])
}

/// Run one experiment. `ens` is the shared base ensemble, read only.
pub fn run_experiment(cfg: &Validated, experiment: Experiment, ens: Option<&PathEnsemble>) -> Outcome {
    let base = || ens.expect("base ensemble simulated");
    match experiment {
        Experiment::Simulate => simulate(cfg, base()),
        Experiment::VerifyLemma2 => lemma2(cfg, base()),
        Experiment::VerifyLemma3 => lemma3(cfg, base()),
        Experiment::VerifyLemma4 => lemma4(cfg, base()),
        Experiment::VerifyProp1 => prop1(cfg, base()),
        Experiment::VerifyProp3 => prop3(cfg, base()),
        Experiment::Convergence => convergence(cfg),
        Experiment::Coincidence => coincidence(cfg, base()),
        Experiment::RemarkProbe => remark_probe(cfg, base()),
    }
}

pub fn needs_base_ensemble(experiment: Experiment) -> bool {
    experiment != Experiment::Convergence
}
