use std::path::PathBuf;

use routescale_core::Error as CoreError;

/// Exit status for bad arguments, matching clap's own usage errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for unreadable or invalid input data.
pub const EXIT_DATA: i32 = 3;
/// Exit status for numerical failure (divergence, degenerate coefficients).
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}, line {line}: {message}")]
    Parse { origin: String, line: u64, message: String },
    #[error("{0}: table is empty")]
    EmptyTable(String),
    #[error("unknown fixture `{name}`; known fixtures: {}", known.join(", "))]
    UnknownFixture { name: String, known: Vec<&'static str> },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
