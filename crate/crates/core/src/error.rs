use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration or argument violated a documented invariant.
    #[error("validation failed at `{path}`: {message}")]
    Validation { path: String, message: String },

    /// Array shapes or grids do not match between operands.
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    /// Argument outside the mathematical domain of a special function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quantity left the representable floating-point range.
    #[error("overflow: {0}")]
    Overflow(String),

    /// The Neumann-mode denominator vanished for the listed `(n, m)` pairs.
    #[error("waveguide resonance at modes {modes:?} (undamped kernel is singular)")]
    Resonance { modes: Vec<(i64, usize)> },

    /// The fixed-point iteration failed to reach its tolerance.
    #[error("no convergence after {iterations} iterations (last delta {last:e})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A field container on disk is malformed or corrupt.
    #[error("container error: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
