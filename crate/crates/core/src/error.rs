use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure category, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Backend,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("bounds error: requested {requested} from {available} available ({what})")]
    Bounds {
        what: String,
        requested: usize,
        available: usize,
    },

    #[error("template error: missing slot `{slot}` in template {template}")]
    MissingSlot { template: String, slot: String },

    #[error("embedding provider error: {message}")]
    Provider { message: String, failed_batch: Vec<String> },

    #[error("training error: {0}")]
    Training(String),

    #[error("classifier service error: {0}")]
    Service(String),

    #[error("llm backend error: {0}")]
    Backend(String),

    #[error("could not parse predicate from response: {raw:?}")]
    PredicateParse { raw: String },

    #[error("generation produced no parseable lines; raw response: {raw:?}")]
    Generation { raw: String },

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("stage `{stage}` has not been run in {dir}")]
    MissingStage { stage: String, dir: PathBuf },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

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
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyDataset
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Bounds { .. }
            | Error::MissingSlot { .. }
            | Error::Training(_)
            | Error::Allocation(_)
            | Error::MissingStage { .. }
            | Error::Config(_) => ErrorKind::Validation,
            Error::Provider { .. }
            | Error::Service(_)
            | Error::Backend(_)
            | Error::PredicateParse { .. }
            | Error::Generation { .. } => ErrorKind::Backend,
            Error::Io { .. } | Error::Json(_) => ErrorKind::Internal,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e @ Error::MissingStage { .. } => e,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
