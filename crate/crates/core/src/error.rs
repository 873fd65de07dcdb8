use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown object label `{0}`")]
    UnknownLabel(String),

    #[error("requested {requested} objects but only {available} are available")]
    TooManyObjects { requested: usize, available: usize },

    #[error("step called on a finished episode; call reset first")]
    EpisodeFinished,

    #[error("catalog index {0} is outside the one-hot range 0..8")]
    IndexOutOfRange(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("external detector unavailable: {0}")]
    DetectorUnavailable(String),

    #[error("detector protocol error: {0}")]
    ProtocolError(String),

    #[error("detector did not answer within {0:?}")]
    Timeout(std::time::Duration),

    #[error("checkpoint variant `{found}` does not match requested `{expected}`")]
    CheckpointVariantMismatch { expected: String, found: String },

    #[error("invalid checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by user input (configuration, labels, paths)
    /// rather than by a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownLabel(_)
                | Error::TooManyObjects { .. }
                | Error::InvalidValue(_)
                | Error::CheckpointVariantMismatch { .. }
        )
    }
}
