use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stack left the shared-spectral-structure regime: residual {residual:e} exceeds {tolerance:e}")]
    Regime { residual: f64, tolerance: f64 },

    #[error("scalar dynamics diverged at step {step}: lambda = {value:e} left (0, {limit:e}]")]
    Divergence { step: usize, value: f64, limit: f64 },

    #[error("finite-difference oracle is capped at {cap} parameters, stack has {params}")]
    OracleCap { params: usize, cap: usize },

    #[error("eigenvector structure error: {0}")]
    Structure(String),

    #[error("could not parse config: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in `error.json` records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::Contract(_) => "contract",
            Error::Regime { .. } => "regime",
            Error::Divergence { .. } => "divergence",
            Error::OracleCap { .. } => "oracle_cap",
            Error::Structure(_) => "structure",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 for anything rejected before compute, 3 for
    /// failures that happen while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Dimension(_) | Error::Domain(_) => 2,
            Error::OracleCap { .. } => 2,
            _ => 3,
        }
    }
}
