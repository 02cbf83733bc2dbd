use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("sequence too short: {len} steps cannot be sub-sampled by factor {factor}")]
    SequenceTooShort { len: usize, factor: usize },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported audio encoding in {}: {detail}", path.display())]
    NonPcm { path: PathBuf, detail: String },

    #[error("audio file {} contains no samples", .0.display())]
    EmptyAudio(PathBuf),

    #[error("invalid caption: {0:?}")]
    InvalidCaption(String),

    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("CIDEr needs at least 2 items, got {0}")]
    InsufficientCorpus(usize),

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }
}
