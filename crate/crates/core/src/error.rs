use thiserror::Error;

/// Errors raised anywhere in the feature pipeline, the tensor engine, the
/// network or the training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty voicing: F0 track has no voiced frame")]
    EmptyVoicing,

    #[error("timing out of range: {0}")]
    TimingOutOfRange(String),

    #[error("degenerate range: lo ({lo}) must be strictly below hi ({hi})")]
    DegenerateRange { lo: f64, hi: f64 },

    #[error("{op}: shape mismatch {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("empty IPU: no unpadded word")]
    EmptyIpu,

    #[error("invalid token {token} for vocabulary of size {vocab}")]
    TokenOutOfVocabulary { token: usize, vocab: usize },

    #[error("requested length {requested} exceeds maximum {max}")]
    LengthExceeded { requested: usize, max: usize },

    #[error("{0}: empty sequence")]
    EmptySequence(&'static str),

    #[error("all frames are padding; nothing to score")]
    AllPadded,

    #[error("learning-rate schedule is defined from step 1")]
    StepZero,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("empty split `{0}`")]
    EmptySplit(String),

    #[error("backward already ran on this graph")]
    BackwardTwice,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    let shapes = shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ");
    Error::Shape { op, shapes }
}
