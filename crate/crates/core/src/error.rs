use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("temperature {t} °C or air speed {v} m/s outside the comfort model domain")]
    PmvDomain { t: f64, v: f64 },
    #[error("comfort model iteration did not converge after {0} iterations")]
    PmvNonConvergence(usize),
    #[error("least-squares design matrix is rank deficient")]
    RankDeficient,
    #[error("MPC infeasible at step {step} even after relaxation (violation {violation:.3e})")]
    MpcInfeasible { step: usize, violation: f64 },
    #[error(transparent)]
    Solver(#[from] spotmpc_nlp::NlpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("trace error: {0}")]
    Trace(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
