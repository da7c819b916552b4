use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-uniform sampling at sample {index}: step {step} s, expected {expected} s")]
    NonUniform {
        index: usize,
        step: f64,
        expected: f64,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("SOC left the OCV table at sample {index} (soc = {soc})")]
    SocExcursion { index: usize, soc: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NonFinite(_) => "non_finite",
            Error::Overflow(_) => "overflow",
            Error::NotConverged(_) => "not_converged",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Dimension { .. } => "dimension",
            Error::NonUniform { .. } => "non_uniform",
            Error::Data(_) => "data",
            Error::SocExcursion { .. } => "soc_excursion",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
