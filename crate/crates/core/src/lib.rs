//! Simulation and pathwise verification for rank-based market models.
//!
//! Paths are simulated on log scale with an Euler scheme whose ranks are
//! frozen at the left endpoint of each step. The calculus module provides
//! discrete Itô, forward, backward and Stratonovich integrals, and the
//! verification module measures how far sampled paths are from the
//! Stratonovich representations of absolute values, extrema, ranked processes
//! and functionally generated portfolios.

// negated comparisons are how NaN inputs get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod error;
pub mod paths;
pub mod portfolio;
pub mod rank;
pub mod sde;
pub mod stats;
pub mod verification;

pub use error::{Error, Result};
pub use paths::{build_grid, Increments, PathEnsemble, RngSpec, TimeGrid};
pub use portfolio::{GeneratingFunction, Generator, WeightSeries};
pub use rank::{ranked_ensemble, RankFrame};
pub use sde::{AtlasParams, Model, RankBasedParams};
pub use verification::{Claim, ConvergenceReport, ConvergenceStudy, Residual};
