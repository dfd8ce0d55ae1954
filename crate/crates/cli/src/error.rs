use std::io;

/// Failure of a command, carrying the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset problem: {0}")]
    Dataset(String),
    #[error("predictions mention unknown question_id {0}")]
    UnknownQuestionId(i64),
    #[error("trace {0} carries no candidate buffer")]
    TraceWithoutBuffer(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::Io { .. } => 1,
            Self::Dataset(_) | Self::UnknownQuestionId(_) | Self::TraceWithoutBuffer(_) => 2,
            Self::Backend(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
