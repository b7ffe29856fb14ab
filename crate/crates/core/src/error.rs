use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid node id {0}")]
    InvalidNode(usize),
    #[error("unknown node label {0}")]
    UnknownLabel(u32),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("turning fractions of route {route} sum to {sum}")]
    TurningFractions { route: String, sum: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("density {value} on route {route} is negative")]
    NegativeDensity { route: String, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing density for local route ({0}, {1})")]
    MissingDensity(usize, usize),
    #[error("signalized cell needs a signal state")]
    MissingSignal,
    #[error("missing population layer: {0}")]
    MissingPopulation(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("linear program did not converge within {0} pivots")]
    LpNonConvergence(usize),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by a malformed scenario rather than by numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::UnknownLabel(_)
                | Error::InvalidNetwork(_)
                | Error::InvalidParameter(_)
                | Error::TurningFractions { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
