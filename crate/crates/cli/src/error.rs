use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: cannot parse `{token}`")]
    Parse { line: u64, token: String },

    #[error("dataset has no data rows")]
    EmptyDataset,

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    /// A model or dataset the engines refuse before any solve starts.
    #[error("{0}")]
    Setup(redopt::Error),

    #[error("{0}")]
    Numerical(redopt::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Parse { .. } => "parse_error",
            CliError::EmptyDataset => "empty_dataset",
            CliError::Io { .. } => "io",
            CliError::Setup(e) | CliError::Numerical(e) => e.kind(),
        }
    }

    /// One-line JSON diagnostic for standard error.
    pub fn diagnostic(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}
