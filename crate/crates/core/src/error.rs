use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value at path {path}, asset {asset}, time index {step}")]
    NonFinite {
        path: usize,
        asset: usize,
        step: usize,
    },

    #[error("generating function `{name}` failed at path {path}, time index {step}: {reason}")]
    Generator {
        name: String,
        path: usize,
        step: usize,
        reason: String,
    },

    #[error(
        "non-positive portfolio gross return {gross} at path {path}, time index {step} (weights {weights:?})"
    )]
    NonPositiveWealth {
        path: usize,
        step: usize,
        gross: f64,
        weights: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Location of a numeric failure, when the error carries one.
    pub fn location(&self) -> Option<(usize, usize)> {
        match self {
            Error::NonFinite { path, step, .. }
            | Error::Generator { path, step, .. }
            | Error::NonPositiveWealth { path, step, .. } => Some((*path, *step)),
            _ => None,
        }
    }

    /// Numeric failures arise from data; everything else is a bad request.
    pub fn is_numeric(&self) -> bool {
        self.location().is_some()
    }
}
