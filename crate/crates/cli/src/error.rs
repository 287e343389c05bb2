use lddmm_metric::metric_learning::TrainFailure;
use lddmm_metric::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Train(#[from] TrainFailure),
}

fn core_code(e: &Error) -> i32 {
    match e {
        Error::Numerical { .. } | Error::RegistrationFailures { .. } => 4,
        Error::Input(_) | Error::Io { .. } | Error::Format { .. } | Error::Json(_) => 3,
    }
}

impl CliError {
    /// 2 usage or config, 3 input data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => core_code(e),
            CliError::Train(f) => core_code(&f.error),
        }
    }
}
