use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid job: {}", .0.join("; "))]
    InvalidJob(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("agent unavailable: {0}")]
    AgentUnavailable(String),

    #[error("no fixture for request {0}")]
    MockMiss(String),

    #[error("could not parse agent output: {0}")]
    ParseFailure(String),

    #[error("template `{template}` has unbound placeholder `{placeholder}`")]
    UnboundPlaceholder { template: String, placeholder: String },

    #[error("no clip survived filtering")]
    EmptySelection,

    #[error("plan references unknown clip {0}")]
    PlanInconsistent(u32),

    #[error("media toolkit failed: {0}")]
    Media(String),

    #[error("render failed on {video_id} [{start:.3}, {end:.3}): {message}")]
    Render {
        video_id: String,
        start: f64,
        end: f64,
        message: String,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("missing stage output {path} (run `{stage}` first)")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
