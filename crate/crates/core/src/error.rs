use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate patient id `{0}`")]
    DuplicatePatient(String),

    #[error("duplicate note id `{0}`")]
    DuplicateNote(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} patients are too few for three non-empty partitions")]
    TooFewPatients(usize),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} is outside the vocabulary (size {size})")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("AUROC is undefined when only one class is present")]
    SingleClass,

    #[error("no predictions to score")]
    EmptyPredictions,

    #[error("input width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("model has not been trained")]
    Untrained,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

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

    /// True for errors caused by user-supplied configuration rather than by a
    /// failing computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Json(_)
        )
    }
}
