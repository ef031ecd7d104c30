use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("prototype projection failed: class {class} has no training samples")]
    Projection { class: usize },

    #[error("schema error at row {row}, field `{field}`: {message}")]
    Schema {
        row: usize,
        field: String,
        message: String,
    },

    #[error("render error: missing placeholder `{0}`")]
    Render(String),

    #[error("llm transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("llm response error: {0}")]
    Response(String),

    #[error("embedding provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by a remote service rather than by local
    /// inputs; the CLI maps these to a distinct exit code.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. } | Error::Response(_) | Error::Provider { .. }
        )
    }
}
