use std::path::Path;

use duallab::Error;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("analysis infeasible: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Data(_) => 5,
            CliError::Infeasible(_) => 6,
        }
    }
}

/// Classifies a library error raised while working on input data.
pub fn data(e: Error) -> CliError {
    match e {
        Error::Io(io) => CliError::Io(io.to_string()),
        Error::Divergence { .. } => CliError::Divergence(e.to_string()),
        Error::Parameter(msg) => CliError::Config(msg),
        other => CliError::Data(other.to_string()),
    }
}

/// Like [`data`], but naming the file involved.
pub fn input(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match data(e) {
        CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn write(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Io(format!("writing {}: {e}", path.display()))
}
