use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const RANK: u8 = 3;
    pub const NOT_CONVERGED: u8 = 4;
    pub const FINGERPRINT: u8 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] hinf_dpi::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("training did not converge within {iterations} iterations (last ‖ΔW‖ = {last:.3e})")]
    NotConverged { iterations: usize, last: f64 },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        use hinf_dpi::Error as E;
        match self {
            Self::Config(_) | Self::Parse { .. } => exit::CONFIG,
            Self::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => exit::CONFIG,
            Self::Core(E::InvalidConfig(_) | E::Archive(_) | E::DimensionMismatch { .. }) => exit::CONFIG,
            Self::Core(E::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => exit::CONFIG,
            Self::Core(E::RankCondition { .. } | E::SingularRegressor { .. }) => exit::RANK,
            Self::Core(E::Fingerprint(_)) => exit::FINGERPRINT,
            Self::NotConverged { .. } => exit::NOT_CONVERGED,
            _ => exit::FAILURE,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
