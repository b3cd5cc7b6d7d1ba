use thiserror::Error;

/// Errors produced by the filter, monitor, simulator, and file layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Every log-weight is negative infinity, so no normalization exists.
    #[error("degenerate weights: all log-weights are -inf")]
    DegenerateWeights,

    /// The receiver position coincides with a satellite position.
    #[error("zero range between receiver and satellite")]
    ZeroRange,

    /// Negative argument passed to the squared-Gaussian density.
    #[error("chi-squared density argument must be nonnegative, got {0}")]
    NegativeDensityArg(f64),

    /// Weighted covariance is undefined (single effective particle).
    #[error("degenerate covariance: sum of squared weights is {0}, need < 1")]
    DegenerateCovariance(f64),

    /// An epoch carried no pseudorange measurements.
    #[error("epoch has no pseudorange measurements")]
    NoMeasurements,

    /// Residual tests need more measurements than state dimensions.
    #[error("insufficient redundancy: {measurements} measurements for state dimension {state_dim}")]
    InsufficientRedundancy {
        measurements: usize,
        state_dim: usize,
    },

    /// Paired sequences disagree in length.
    #[error("{context}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A value violated a documented invariant.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// A data file failed to parse; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Bad configuration file or option combination.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}
