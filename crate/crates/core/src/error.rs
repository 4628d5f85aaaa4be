use thiserror::Error;

/// Errors raised by the panel, association, missingness, estimator and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed data at row {row}: {message}")]
    MalformedData { row: usize, message: String },

    #[error("malformed data: {0}")]
    InvalidPanel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("association fit failed after {iterations} iterations: {message}")]
    AssociationFit {
        iterations: usize,
        message: String,
        trace: Vec<f64>,
    },

    #[error("IPFP did not converge (margin residual {residual:.3e})")]
    Ipfp { residual: f64 },

    #[error("separation detected while fitting {model}")]
    Separation { model: String },

    #[error("model fit did not converge: {0}")]
    ModelFit(String),

    #[error("imputation failed: {0}")]
    Imputation(String),

    #[error("pooling failed: {0}")]
    Pooling(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bias undefined for a zero true value (parameter {0})")]
    ZeroTruth(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
