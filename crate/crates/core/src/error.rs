//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error enumeration.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the declared support of a demand system or law.
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument violates a precondition unrelated to support (n = 0, i = j, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// An operation was called on data in the wrong state (e.g. control
    /// residuals on an exogenous dataset).
    #[error("state error: {0}")]
    State(String),

    /// A coordinate has zero variance and cannot be bandwidth-scaled.
    #[error("degenerate coordinate: {0}")]
    DegenerateCoordinate(String),

    /// Too few effective observations near an evaluation point.
    #[error("sparse region at {point}: effective sample {effective:.2} < {required:.0}")]
    SparseRegion {
        point: String,
        effective: f64,
        required: f64,
    },

    /// A conditional density fell below the configured floor.
    #[error("density {value:.3e} below floor {floor:.1e} at {point}")]
    DensityFloor {
        value: f64,
        floor: f64,
        point: String,
    },

    /// Root bracketing failed while inverting a CDF.
    #[error("bracketing failure: {0}")]
    Bracketing(String),

    /// A requested level lies outside the range of an estimated curve.
    #[error("extrapolation error: level {level} outside curve range [{lo:.6}, {hi:.6}]")]
    Extrapolation { level: f64, lo: f64, hi: f64 },

    /// A provider failed its own consistency checks (quantile/CDF round trips).
    #[error("provider inconsistency: {0}")]
    ProviderInconsistency(String),

    /// Grid construction dropped every point.
    #[error("empty grid: {0}")]
    EmptyGrid(String),

    /// Too many bootstrap replicates failed to evaluate.
    #[error("unreliable bootstrap: {failed} of {total} replicates failed")]
    UnreliableBootstrap { failed: usize, total: usize },

    /// The provider does not implement the requested evaluation channel.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Estimation was attempted with insufficient data.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (de)serialization failure, with context when available.
    #[error("parse error{}: {source}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Json {
        #[source]
        source: serde_json::Error,
        context: Option<String>,
    },
}

impl From<serde_json::Error> for Error {
    fn from(source: serde_json::Error) -> Self {
        Error::Json {
            source,
            context: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
