use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero sample variance")]
    ConstantColumn(usize),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input")]
    EmptyInput,

    #[error(
        "no admissible parameter region: both theta0 + epsilon and theta0 - epsilon fall outside the parameter domain"
    )]
    NoAdmissibleRegion,

    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    #[error("kappa at theta = {theta} is {kappa}, below the boundary minimum {boundary}")]
    MonotonicityViolation { theta: f64, kappa: f64, boundary: f64 },

    #[error("expected log-likelihood drift is not positive ({0})")]
    NonpositiveDrift(f64),

    #[error("dispersion matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Input { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
