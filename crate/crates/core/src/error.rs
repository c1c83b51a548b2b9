use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid eigen-index {0:?}: every component must be >= 1")]
    InvalidIndex(Vec<i64>),

    #[error("eigen-index has {got} components, expected {expected}")]
    IndexDimension { expected: usize, got: usize },

    #[error("mode component {component} is outside the resolvable band 1..={n}")]
    OutOfBand { component: usize, n: usize },

    #[error("requested {requested} indices but only {available} exist with components <= {max_component}")]
    TooManyIndices {
        requested: usize,
        available: usize,
        max_component: usize,
    },

    #[error("unsupported dimension {0}; expected 1, 2 or 3")]
    Dimension(usize),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("grid mismatch between residual and test-function batch")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("all residual coefficients are zero; the norm ratio is undefined")]
    UndefinedRatio,

    #[error("exact solution vanishes on the test set; relative error is undefined")]
    ZeroReference,

    #[error("ellipticity violated: |beta| = {0} must be < 1")]
    Ellipticity(f64),

    #[error("tau balancing is undefined: {0}")]
    BalancingUndefined(String),

    #[error("operation requires a soft-constraint network")]
    HardBoundary,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
