use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("model domain error: {0}")]
    Domain(String),

    #[error("degenerate eigenvalues in two-compartment solution (zeta = {0})")]
    DegenerateEigenvalues(f64),

    #[error("linearization failed at individual {index}: {source}")]
    Linearization {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("singular linear system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("non-finite function value when perturbing component {0}")]
    NonFinite(usize),

    #[error("statistic {0} requires a fit that was not provided")]
    MissingFit(&'static str),

    #[error("calibration failed: {failed} of {total} Monte Carlo replicates failed")]
    Calibration { failed: usize, total: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Domain(_) => "domain",
            Error::DegenerateEigenvalues(_) => "degenerate",
            Error::Linearization { .. } => "linearization",
            Error::Singular { .. } => "singular",
            Error::NonFinite(_) => "non_finite",
            Error::MissingFit(_) => "contract",
            Error::Calibration { .. } => "calibration",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
