use std::path::PathBuf;

/// Errors produced by the screening, projection and export routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("statistic scope contains no samples")]
    EmptyScope,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("direction is degenerate: {0}")]
    DegenerateDirection(String),

    #[error("concept direction lives in {found} space but {expected} space was required")]
    SpaceMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("empirical null needs at least {needed} statistics, got {found}")]
    TooFewStatistics { needed: usize, found: usize },

    #[error("degenerate spread: {0}")]
    DegenerateSpread(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("pipeline stage `{stage}` has not produced {path}")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
