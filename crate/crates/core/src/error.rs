use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("seed response {response} exceeds chain threshold {threshold}")]
    SeedOutsideThreshold { response: f64, threshold: f64 },

    #[error("conditional kernel broke its contract: {0}")]
    KernelContract(String),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 for usage/config problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidInput(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::SeedOutsideThreshold { .. }
            | Error::KernelContract(_)
            | Error::SingularInnovation
            | Error::NotPositiveSemidefinite { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
