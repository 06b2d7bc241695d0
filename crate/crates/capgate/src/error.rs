//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// Variants split into three families, which the CLI maps onto distinct exit
/// codes: input/validation problems ([`Error::InvalidParameter`],
/// [`Error::SampleTooSmall`], [`Error::Schema`]), numerical/statistical failures
/// ([`Error::ZeroVariance`], [`Error::DegenerateSpread`], [`Error::TiedSides`],
/// [`Error::Calibration`], [`Error::Computation`]), and I/O failures
/// ([`Error::Io`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Too few observations for the requested computation.
    #[error("sample too small: need at least {min} values, got {got}")]
    SampleTooSmall { min: usize, got: usize },

    /// All observations are identical, so no spread-based quantity exists.
    #[error("zero variance: all {n} values are identical")]
    ZeroVariance { n: usize },

    /// Quantile spread collapsed (percentile-based index undefined).
    #[error("degenerate quantile spread: {0}")]
    DegenerateSpread(String),

    /// Upper and lower capability ratios are tied; formulas that assume a
    /// uniquely active specification side do not apply.
    #[error(
        "specification sides are tied (|cpu - cpl| within tolerance); \
         this computation requires a uniquely active side"
    )]
    TiedSides,

    /// A model/spec-limit calibration target cannot be met.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// A Monte Carlo or iterative computation failed to produce a result.
    #[error("computation failed: {0}")]
    Computation(String),

    /// Input data violates the dataset schema.
    #[error("schema violation at line {line}: {message}")]
    Schema { line: u64, message: String },

    /// Filesystem failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An inner error annotated with where it occurred (e.g. a grid cell or a
    /// dataset record).
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps `self` with a location/context note.
    pub fn in_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping any [`Error::Context`] layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Validates that `value` is finite, returning an [`Error::InvalidParameter`]
/// naming `what` otherwise.
pub(crate) fn require_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} must be finite, got {value}"
        )))
    }
}
