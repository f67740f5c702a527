use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("integration failed at t = {t}: non-finite derivative")]
    Integration { t: f64 },

    #[error("rank condition violated: {windows} windows collected but more than {unknowns} are required")]
    RankCondition { windows: usize, unknowns: usize },

    #[error("singular regressor: numerical rank {rank} of {unknowns} unknowns (condition estimate {condition:e})")]
    SingularRegressor { rank: usize, unknowns: usize, condition: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("simulation diverged at t = {t} (|X|∞ = {norm:e})")]
    Diverged { t: f64, norm: f64 },

    #[error("dataset fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error("malformed dataset archive: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, actual })
    }
}
