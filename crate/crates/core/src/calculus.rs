//! Discrete stochastic integrals, brackets and local time on a uniform grid.
//!
//! All estimators return running series of length `M + 1` starting at 0.
//! With window `eps = c h` the Russo–Vallois style averages are discretised
//! as Riemann sums on the grid, with paths extended constantly outside
//! `[0, T]` (`X(t) = X(0)` for `t < 0`, `X(t) = X(T)` for `t > T`):
//!
//! ```text
//! forward [m]  = (1/c) sum_{j<m}       Y[j] (X[j+c] - X[j])
//! backward[m]  = (1/c) sum_{1<=j<=m}   Y[j] (X[j]   - X[j-c])
//! covar   [m]  = (1/c) sum_{j<m} (X[j+c] - X[j]) (Y[j+c] - Y[j])
//! ```
//!
//! At `c = 1` these are the left-point (Itô), right-point and realized
//! covariation sums, and `backward - forward = covar` holds term by term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ito,
    Forward,
    Backward,
    Stratonovich,
    Covariation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralResult {
    pub values: Vec<f64>,
    pub scheme: Scheme,
    /// Window as a multiple of the grid step.
    pub window: usize,
}

impl IntegralResult {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("integral series is never empty")
    }
}

fn check_pair(y: &[f64], x: &[f64]) -> Result<()> {
    if y.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: x.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("series", "must contain at least one point"));
    }
    Ok(())
}

fn check_window(c: usize) -> Result<()> {
    if c < 1 {
        return Err(Error::invalid("window", "must be a positive multiple of the step"));
    }
    Ok(())
}

fn running(len: usize, mut term: impl FnMut(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut acc = 0.0;
    out.push(acc);
    for j in 0..len - 1 {
        acc += term(j);
        out.push(acc);
    }
    out
}

/// `sgn(x) = 1{x > 0} - 1{x <= 0}`; zero maps to -1.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn sgn_series(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sgn(v)).collect()
}

pub fn ito_integral(y: &[f64], x: &[f64]) -> Result<IntegralResult> {
    check_pair(y, x)?;
    Ok(IntegralResult {
        values: running(x.len(), |j| y[j] * (x[j + 1] - x[j])),
        scheme: Scheme::Ito,
        window: 1,
    })
}

fn ahead(x: &[f64], j: usize) -> f64 {
    x[j.min(x.len() - 1)]
}

fn behind(x: &[f64], j: usize, c: usize) -> f64 {
    x[j.saturating_sub(c)]
}

pub fn forward_integral(y: &[f64], x: &[f64], window: usize) -> Result<IntegralResult> {
    check_pair(y, x)?;
    check_window(window)?;
    let c = window as f64;
    let values = running(x.len(), |j| y[j] * (ahead(x, j + window) - x[j]) / c);
    Ok(IntegralResult {
        values,
        scheme: Scheme::Forward,
        window,
    })
}

pub fn backward_integral(y: &[f64], x: &[f64], window: usize) -> Result<IntegralResult> {
    check_pair(y, x)?;
    check_window(window)?;
    let c = window as f64;
    let values = running(x.len(), |j| y[j + 1] * (x[j + 1] - behind(x, j + 1, window)) / c);
    Ok(IntegralResult {
        values,
        scheme: Scheme::Backward,
        window,
    })
}

pub fn covariation(x: &[f64], y: &[f64], window: usize) -> Result<IntegralResult> {
    check_pair(x, y)?;
    check_window(window)?;
    let c = window as f64;
    let values = running(x.len(), |j| {
        (ahead(x, j + window) - x[j]) * (ahead(y, j + window) - y[j]) / c
    });
    Ok(IntegralResult {
        values,
        scheme: Scheme::Covariation,
        window,
    })
}

/// Realized quadratic variation `sum (dX)^2` over the whole grid.
pub fn realized_variation(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

/// Midpoint sum `sum_{j<m} (Y[j] + Y[j+1])/2 (X[j+1] - X[j])`.
///
/// Equal to `ito + covariation / 2` at `eps = h`; the two forms are checked
/// against each other in debug builds.
pub fn stratonovich_integral(y: &[f64], x: &[f64]) -> Result<IntegralResult> {
    check_pair(y, x)?;
    let values = running(x.len(), |j| 0.5 * (y[j] + y[j + 1]) * (x[j + 1] - x[j]));
    #[cfg(debug_assertions)]
    {
        let ito = ito_integral(y, x)?;
        let cov = covariation(y, x, 1)?;
        let mut scale = 0.0f64;
        for j in 0..x.len() - 1 {
            scale += ((y[j] + y[j + 1]) * (x[j + 1] - x[j])).abs();
        }
        for (m, v) in values.iter().enumerate() {
            let other = ito.values[m] + 0.5 * cov.values[m];
            debug_assert!(
                (v - other).abs() <= 1e-12 * scale.max(1.0),
                "stratonovich forms disagree at {m}: {v} vs {other}"
            );
        }
    }
    Ok(IntegralResult {
        values,
        scheme: Scheme::Stratonovich,
        window: 1,
    })
}

/// Tanaka residuals of `X` at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTime {
    /// `(int sgn X dX - |X(t)| + |X(0)|) / 2`, the sign convention read literally
    /// from `int sgn X dX = |X(t)| - |X(0)| + 2 L(t)`; non-positive on Brownian paths.
    pub literal: Vec<f64>,
    /// `|X(t)| - |X(0)| - int sgn X dX`, the standard non-negative Tanaka residual.
    pub standard: Vec<f64>,
}

pub fn local_time_residual(x: &[f64]) -> Result<LocalTime> {
    let ito = ito_integral(&sgn_series(x), x)?;
    let x0 = x[0].abs();
    let standard: Vec<f64> = x
        .iter()
        .zip(&ito.values)
        .map(|(v, i)| v.abs() - x0 - i)
        .collect();
    let literal = x
        .iter()
        .zip(&ito.values)
        .map(|(v, i)| 0.5 * (i - v.abs() + x0))
        .collect();
    Ok(LocalTime { literal, standard })
}
