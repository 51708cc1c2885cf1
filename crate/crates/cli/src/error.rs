use thiserror::Error;

/// Errors surfaced by the command-line driver, each with an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("config-data mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Core(#[from] ivaear::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },

    #[error("{failed} of {total} replicates failed")]
    PartialFailure { failed: usize, total: usize },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ivaear::Error as E;
        match self {
            Self::Config(_) | Self::Mismatch(_) => EXIT_VALIDATION,
            Self::PartialFailure { .. } => EXIT_PARTIAL,
            Self::Write { .. } => EXIT_RUNTIME,
            Self::Core(e) => match e {
                E::InvalidArgument(_)
                | E::Shape(_)
                | E::Data { .. }
                | E::CheckpointFormat(_)
                | E::UnsupportedVersion { .. }
                | E::Csv(_) => EXIT_VALIDATION,
                E::DegenerateCovariance { .. }
                | E::SimulationDiverged { .. }
                | E::TrainingDiverged { .. }
                | E::DegenerateColumn { .. }
                | E::DegenerateDesign(_)
                | E::Io(_) => EXIT_RUNTIME,
            },
        }
    }
}
