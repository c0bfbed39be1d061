use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    /// The inverse reparametrization divides by a tail sum of the
    /// reparametrized coefficients; it is not defined when one vanishes.
    #[error("xibar -> xi is not invertible: tail sum starting at index {index} is zero")]
    DegenerateParametrization { index: usize },

    #[error("{k} distillation steps exceed the configured cap of {cap}")]
    TooManySteps { k: usize, cap: usize },

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("solver infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "{what} contains a non-finite entry at position {pos}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_positive_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Input(format!(
            "ridge penalty must be finite and positive, got {lambda}"
        )));
    }
    Ok(())
}
