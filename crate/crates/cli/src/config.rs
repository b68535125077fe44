//! Run configuration: a single TOML file.
//!
//! ```toml
//! output_dir = "out"
//! experiments = ["simulate", "verify_prop1", "convergence"]
//!
//! [model]
//! kind = "atlas"          # atlas | rank_based | brownian
//! n = 3
//! g = 0.1
//! sigma = 0.2
//! # rank_based: drifts = [...], sigmas = [...]
//! # initial_log = [...]
//!
//! [grid]
//! horizon = 1.0           # alias T
//! steps = 4096            # alias M
//!
//! [monte_carlo]
//! paths = 100
//! master_seed = 42
//!
//! [portfolio]
//! generator = "entropy"   # constant (value) | entropy | diversity (p) | geometric_mean
//!
//! [convergence]
//! claim = "lemma2"        # any verify claim, band_occupation or decomposition
//! levels = [4096, 16384, 65536]
//!
//! [coincidence]
//! band = 0.01             # default sqrt(h)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use atlas_core::verification::Claim;
use atlas_core::{AtlasParams, Error as CoreError, Generator, Model, RankBasedParams, TimeGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    VerifyLemma2,
    VerifyLemma3,
    VerifyLemma4,
    VerifyProp1,
    VerifyProp3,
    Convergence,
    Coincidence,
    RemarkProbe,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::VerifyLemma2 => "verify_lemma2",
            Experiment::VerifyLemma3 => "verify_lemma3",
            Experiment::VerifyLemma4 => "verify_lemma4",
            Experiment::VerifyProp1 => "verify_prop1",
            Experiment::VerifyProp3 => "verify_prop3",
            Experiment::Convergence => "convergence",
            Experiment::Coincidence => "coincidence",
            Experiment::RemarkProbe => "remark_probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drifts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_log: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(alias = "T")]
    pub horizon: f64,
    #[serde(alias = "M")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub paths: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        Self {
            generator: "entropy".into(),
            p: None,
            value: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub claim: String,
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
}

/// The file as written. [`RunConfig::echo`] gives the normalized form that
/// summaries embed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub experiments: Vec<Experiment>,
    pub model: ModelSection,
    pub grid: GridSection,
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub portfolio: PortfolioSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default)]
    pub coincidence: CoincidenceSection,
}

impl RunConfig {
    /// Experiments sorted and deduplicated, output directory dropped, so the
    /// echo does not depend on listing order or on where results land.
    pub fn echo(&self) -> RunConfig {
        let experiments: BTreeSet<Experiment> = self.experiments.iter().copied().collect();
        RunConfig {
            output_dir: None,
            experiments: experiments.into_iter().collect(),
            ..self.clone()
        }
    }
}

/// What a convergence study measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyTarget {
    Claim(Claim),
    BandOccupation,
    Decomposition,
}

impl StudyTarget {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lemma2" => StudyTarget::Claim(Claim::Lemma2),
            "lemma3" => StudyTarget::Claim(Claim::Lemma3),
            "lemma4_max" => StudyTarget::Claim(Claim::Lemma4Max),
            "lemma4_min" => StudyTarget::Claim(Claim::Lemma4Min),
            "prop1" => StudyTarget::Claim(Claim::Prop1),
            "prop3" => StudyTarget::Claim(Claim::Prop3),
            "band_occupation" => StudyTarget::BandOccupation,
            "decomposition" => StudyTarget::Decomposition,
            _ => return None,
        })
    }
}

/// A configuration that passed every check; experiments run from this.
#[derive(Debug, Clone)]
pub struct Validated {
    pub raw: RunConfig,
    pub experiments: Vec<Experiment>,
    pub model: Model,
    pub grid: TimeGrid,
    pub paths: usize,
    pub master_seed: u64,
    pub generator: Generator,
    pub study: Option<(StudyTarget, Vec<usize>)>,
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Line (1-based) of `key` inside `[section]`, or of the section header when
/// the key is absent. Top-level keys use an empty section.
pub fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    locate_key(source, section, key).or_else(|| locate_header(source, section))
}

fn locate_key(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (idx, line) in source.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            current = name.trim();
            continue;
        }
        if current == section {
            if let Some(rest) = trimmed.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(idx + 1);
                }
            }
        }
    }
    None
}

fn locate_header(source: &str, section: &str) -> Option<usize> {
    source
        .lines()
        .position(|l| l.trim().strip_prefix('[').and_then(|t| t.strip_suffix(']')).map(str::trim) == Some(section))
        .map(|i| i + 1)
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

pub fn parse(source: &str) -> Result<RunConfig, Vec<Diagnostic>> {
    toml::from_str(source).map_err(|e| {
        vec![Diagnostic {
            line: e.span().map(|s| line_of_offset(source, s.start)),
            field: "config".into(),
            message: e.message().to_string(),
        }]
    })
}

struct Checker<'a> {
    source: &'a str,
    found: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, section: &str, key: &str, message: impl Into<String>) {
        let field = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        let alias = match key {
            "horizon" => Some("T"),
            "steps" => Some("M"),
            _ => None,
        };
        let line = locate_key(self.source, section, key)
            .or_else(|| alias.and_then(|a| locate_key(self.source, section, a)))
            .or_else(|| locate_header(self.source, section));
        self.found.push(Diagnostic {
            line,
            field,
            message: message.into(),
        });
    }

    fn core(&mut self, section: &str, err: CoreError) {
        match err {
            CoreError::Invalid { field, reason } => {
                let key = field.rsplit('.').next().unwrap_or(&field).to_string();
                self.push(section, &key, reason);
            }
            other => self.push(section, "kind", other.to_string()),
        }
    }
}

fn build_model(m: &ModelSection, chk: &mut Checker) -> Option<Model> {
    let require = |chk: &mut Checker, key: &str, present: bool| {
        if !present {
            chk.push("model", key, format!("required for kind = \"{}\"", m.kind));
        }
        present
    };
    let model = match m.kind.as_str() {
        "atlas" => {
            let ok = require(chk, "n", m.n.is_some())
                & require(chk, "g", m.g.is_some())
                & require(chk, "sigma", m.sigma.is_some());
            if m.drifts.is_some() || m.sigmas.is_some() {
                chk.push("model", "drifts", "per-rank tables belong to kind = \"rank_based\"");
                return None;
            }
            if !ok {
                return None;
            }
            let mut params = AtlasParams::new(m.n.unwrap(), m.g.unwrap(), m.sigma.unwrap());
            if let (Ok(p), Some(init)) = (&params, &m.initial_log) {
                params = p.clone().with_initial(init.clone());
            }
            params.map(Model::Atlas)
        }
        "rank_based" => {
            let ok = require(chk, "drifts", m.drifts.is_some()) & require(chk, "sigmas", m.sigmas.is_some());
            if m.g.is_some() || m.sigma.is_some() {
                chk.push("model", "g", "scalar g and sigma belong to kind = \"atlas\"");
                return None;
            }
            if !ok {
                return None;
            }
            let drifts = m.drifts.clone().unwrap();
            if let Some(n) = m.n {
                if n != drifts.len() {
                    chk.push("model", "n", format!("n = {n} but {} drifts given", drifts.len()));
                    return None;
                }
            }
            let mut params = RankBasedParams::new(drifts, m.sigmas.clone().unwrap());
            if let (Ok(p), Some(init)) = (&params, &m.initial_log) {
                params = p.clone().with_initial(init.clone());
            }
            params.map(Model::RankBased)
        }
        "brownian" => {
            let ok = require(chk, "n", m.n.is_some()) & require(chk, "sigma", m.sigma.is_some());
            if !ok {
                return None;
            }
            if m.g.is_some() || m.drifts.is_some() || m.sigmas.is_some() || m.initial_log.is_some() {
                chk.push("model", "kind", "brownian takes only n and sigma");
                return None;
            }
            let model = Model::Brownian {
                n: m.n.unwrap(),
                sigma: m.sigma.unwrap(),
            };
            model.validate().map(|_| model)
        }
        other => {
            chk.push("model", "kind", format!("unknown model `{other}`; expected atlas, rank_based or brownian"));
            return None;
        }
    };
    match model {
        Ok(model) => Some(model),
        Err(e) => {
            chk.core("model", e);
            None
        }
    }
}

fn build_generator(p: &PortfolioSection, chk: &mut Checker) -> Option<Generator> {
    let g = match p.generator.as_str() {
        "constant" => Generator::Constant {
            value: p.value.unwrap_or(1.0),
        },
        "entropy" => Generator::Entropy,
        "diversity" => match p.p {
            Some(p) => Generator::Diversity { p },
            None => {
                chk.push("portfolio", "p", "required for the diversity generator");
                return None;
            }
        },
        "geometric_mean" => Generator::GeometricMean,
        other => {
            chk.push(
                "portfolio",
                "generator",
                format!("unknown generator `{other}`; expected constant, entropy, diversity or geometric_mean"),
            );
            return None;
        }
    };
    match g.validate() {
        Ok(()) => Some(g),
        Err(e) => {
            chk.core("portfolio", e);
            None
        }
    }
}

/// Check everything a run needs, collecting every problem found.
pub fn validate(raw: RunConfig, source: &str) -> Result<Validated, Vec<Diagnostic>> {
    let mut chk = Checker {
        source,
        found: Vec::new(),
    };
    if raw.experiments.is_empty() {
        chk.push("", "experiments", "list at least one experiment");
    }
    let model = build_model(&raw.model, &mut chk);
    let grid = match TimeGrid::new(raw.grid.horizon, raw.grid.steps) {
        Ok(g) => Some(g),
        Err(e) => {
            chk.core("grid", e);
            None
        }
    };
    if raw.monte_carlo.paths == 0 {
        chk.push("monte_carlo", "paths", "need at least one path");
    }
    let generator = build_generator(&raw.portfolio, &mut chk);
    let n = model.as_ref().map(Model::num_assets);
    let needs_pair = |e: &Experiment| {
        matches!(
            e,
            Experiment::VerifyLemma3 | Experiment::VerifyLemma4 | Experiment::VerifyProp3 | Experiment::Coincidence
        )
    };
    for e in &raw.experiments {
        if needs_pair(e) && n.is_some_and(|n| n < 2) {
            chk.push("", "experiments", format!("{} needs a model with at least 2 processes", e.name()));
        }
    }
    if raw.experiments.contains(&Experiment::RemarkProbe) {
        match &model {
            Some(Model::RankBased(p)) if p.n() >= 3 => {}
            Some(_) => chk.push(
                "model",
                "kind",
                "remark_probe needs kind = \"rank_based\" with at least 3 ranks",
            ),
            None => {}
        }
    }
    let mut study = None;
    if raw.experiments.contains(&Experiment::Convergence) {
        match &raw.convergence {
            None => chk.push("convergence", "levels", "missing [convergence] section"),
            Some(c) => match StudyTarget::parse(&c.claim) {
                None => chk.push("convergence", "claim", format!("unknown claim `{}`", c.claim)),
                Some(target) => {
                    let min = match target {
                        StudyTarget::Claim(claim) => claim.min_assets(),
                        _ => 2,
                    };
                    if n.is_some_and(|n| n < min) {
                        chk.push("convergence", "claim", format!("`{}` needs at least {min} processes", c.claim));
                    }
                    let probe = atlas_core::ConvergenceStudy {
                        model: Model::Brownian { n: 1, sigma: 1.0 },
                        horizon: raw.grid.horizon,
                        levels: c.levels.clone(),
                        paths: raw.monte_carlo.paths.max(1),
                        rng: atlas_core::RngSpec::new(0),
                        generator: Generator::Entropy,
                    };
                    match probe.validate() {
                        Ok(()) => study = Some((target, c.levels.clone())),
                        // already reported against [grid]
                        Err(CoreError::Invalid { field, .. }) if field == "horizon" => {}
                        Err(CoreError::Invalid { reason, .. }) => chk.push("convergence", "levels", reason),
                        Err(e) => chk.core("convergence", e),
                    }
                }
            },
        }
    }
    if let Some(band) = raw.coincidence.band {
        if !(band > 0.0 && band.is_finite()) {
            chk.push("coincidence", "band", format!("must be positive, got {band}"));
        }
    }
    if !chk.found.is_empty() {
        return Err(chk.found);
    }
    let grid = grid.unwrap();
    let experiments: BTreeSet<Experiment> = raw.experiments.iter().copied().collect();
    Ok(Validated {
        experiments: experiments.into_iter().collect(),
        model: model.unwrap(),
        grid,
        paths: raw.monte_carlo.paths,
        master_seed: raw.monte_carlo.master_seed,
        generator: generator.unwrap(),
        study,
        band: raw.coincidence.band.unwrap_or_else(|| grid.step().sqrt()),
        raw,
    })
}

pub fn load(source: &str) -> Result<Validated, Vec<Diagnostic>> {
    validate(parse(source)?, source)
}
