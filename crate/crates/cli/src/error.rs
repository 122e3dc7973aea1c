use std::process::ExitCode;

use iocl_core::Error as CoreError;

use crate::config::ConfigError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// 2 for anything wrong with the inputs, 3 for numerical failures, 1 for
/// failures writing outputs.
pub fn exit_code(err: &CliError) -> ExitCode {
    let code = match err {
        CliError::Config(ConfigError::Field { .. }) | CliError::Usage(_) => 2,
        CliError::Config(ConfigError::Core(e)) | CliError::Core(e) => core_code(e),
        CliError::Csv(_) | CliError::Io(_) | CliError::Json(_) => 1,
    };
    ExitCode::from(code)
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Dimension(_)
        | CoreError::NonFinite(_)
        | CoreError::NotPositive { .. }
        | CoreError::InvalidArgument(_)
        | CoreError::NotStabilizable
        | CoreError::Dataset(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => 2,
        _ => 3,
    }
}
