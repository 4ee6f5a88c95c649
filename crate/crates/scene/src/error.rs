use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file format at {path}: {reason}")]
    Format { path: String, reason: String },
}

impl SceneError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SceneError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        SceneError::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn format(path: impl std::fmt::Display, reason: impl Into<String>) -> Self {
        SceneError::Format {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SceneError>;
