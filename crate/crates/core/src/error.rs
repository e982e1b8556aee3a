use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty annotation")]
    EmptyAnnotation,

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("span [{start},{end}) outside text of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("`{0}` is not a hashtag")]
    NotAHashtag(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("missing scores from classifier `{0}`")]
    MissingClassifier(String),

    #[error("committee is not trained")]
    UntrainedCommittee,

    #[error("seed set is empty")]
    EmptySeed,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("inconsistent loop state: {0}")]
    LoopState(String),

    #[error("lease error: {0}")]
    Lease(String),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
