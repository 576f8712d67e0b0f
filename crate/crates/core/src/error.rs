use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shapes or lengths that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// Invalid argument values (empty inputs, non-finite parameters, bad options).
    #[error("invalid input: {0}")]
    Input(String),

    /// A position outside the closed duct interval.
    #[error("position {x} outside domain [0, {length}]")]
    Domain { x: f64, length: f64 },

    /// Non-finite value produced while accumulating a loss.
    #[error("non-finite loss contribution at collocation point {index} (x = {x})")]
    Numeric { index: usize, x: f64 },

    /// Resonant or otherwise degenerate configuration of a closed-form solution.
    #[error("singular configuration: {0}")]
    Singular(String),

    /// Relative error requested against an all-zero reference.
    #[error("relative error undefined: reference field is identically zero")]
    UndefinedMetric,

    /// Analysis that only applies to real boundary data.
    #[error("unsupported analysis: {0}")]
    Unsupported(String),

    /// Malformed checkpoint text.
    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
