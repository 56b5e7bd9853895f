use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {doc_id}: field `{field}`: {reason}")]
    Malformed {
        doc_id: String,
        field: String,
        reason: String,
    },

    #[error("unknown event type `{0}`")]
    UnknownEventType(String),

    #[error("role `{role}` is not part of the role set of `{event_type}`")]
    UnknownRole { event_type: String, role: String },

    #[error("context `{0}` carries conflicting texts")]
    ConflictingContext(String),

    #[error("triggers of the selected events span {extent} words, more than the window of {window}")]
    WindowTooSmall { extent: usize, window: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout has no cell kind for table position {0}")]
    LayoutGap(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("prediction references unknown event {doc_id}#{event}")]
    UnknownEvent { doc_id: String, event: usize },

    #[error("prompt registry: {0}")]
    Registry(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(
        doc_id: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Malformed {
            doc_id: doc_id.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}
