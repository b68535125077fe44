//! Config-driven runner for the atlas-core experiments.
//!
//! A run validates the whole configuration before touching the output
//! directory, computes every requested experiment, then writes the artifacts
//! one file at a time.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{Diagnostic, Validated};
use crate::experiments::{needs_base_ensemble, run_experiment, simulate_ensemble, Artifact};
use crate::output::{emit_csv, emit_summary, ensure_dir, IoError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n{}", format_diagnostics(.0))]
    Config(Vec<Diagnostic>),
    #[error("experiment `{experiment}`: {source}")]
    Numeric {
        experiment: String,
        #[source]
        source: atlas_core::Error,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric { .. } => 3,
            RunError::Io(_) => 4,
        }
    }
}

pub fn read_config(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| {
        RunError::Io(IoError {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
}

pub fn validate_source(source: &str) -> Result<Validated, RunError> {
    config::load(source).map_err(RunError::Config)
}

/// Everything a run wrote, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

pub fn run(cfg: &Validated, out_override: Option<&Path>) -> Result<RunReport, RunError> {
    let dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.raw.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let numeric = |experiment: &str| {
        let experiment = experiment.to_string();
        move |source| RunError::Numeric { experiment, source }
    };
    let base = match cfg.experiments.iter().find(|e| needs_base_ensemble(**e)) {
        Some(e) => Some(simulate_ensemble(cfg).map_err(numeric(e.name()))?),
        None => None,
    };
    let mut artifacts = Vec::new();
    for &e in &cfg.experiments {
        artifacts.extend(run_experiment(cfg, e, base.as_ref()).map_err(numeric(e.name()))?);
    }
    ensure_dir(&dir)?;
    let mut files = Vec::with_capacity(artifacts.len());
    for (name, artifact) in artifacts {
        let path = dir.join(name);
        match artifact {
            Artifact::Csv(table) => emit_csv(&table, &path)?,
            Artifact::Json(value) => emit_summary(&value, &path)?,
        }
        files.push(path);
    }
    Ok(RunReport { output_dir: dir, files })
}

/// Run inside a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &Validated, out: Option<&Path>, threads: Option<usize>) -> Result<RunReport, RunError> {
    match threads {
        None => run(cfg, out),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .expect("thread pool builds");
            pool.install(|| run(cfg, out))
        }
    }
}
