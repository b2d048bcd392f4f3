use std::path::Path;

use thiserror::Error;

use crate::config::KeyPath;

#[derive(Debug, Error)]
pub enum CliError {
    /// TOML syntax or schema error; toml's message already carries the position.
    #[error("{0}")]
    Parse(String),

    #[error("{}{at}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { at: KeyPath, message: String, line: Option<usize> },

    #[error("{file}: {source}")]
    InFile { file: String, source: Box<CliError> },

    #[error("{0}")]
    Io(String),

    #[error("{context}: {source}")]
    Core { context: String, source: fibre_transport::Error },

    #[error("nothing to run: {0}")]
    Empty(String),
}

impl CliError {
    /// Fills in the line of a semantic error from the config source.
    pub fn locate(self, source: &str) -> Self {
        match self {
            CliError::Invalid { at, message, line: None } => {
                let line = at.line_in(source);
                CliError::Invalid { at, message, line }
            }
            other => other,
        }
    }

    pub fn in_file(self, file: &Path) -> Self {
        CliError::InFile { file: file.display().to_string(), source: Box::new(self) }
    }

    pub fn core(context: impl Into<String>, source: fibre_transport::Error) -> Self {
        CliError::Core { context: context.into(), source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
