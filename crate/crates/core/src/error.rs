use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown label `{label}` for dataset `{dataset}`")]
    UnknownLabel { dataset: String, label: String },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{0}` is a bad shadow class and cannot be a generation target")]
    BadShadowTarget(String),
    #[error("shadow class for `{0}` is already registered")]
    DuplicateShadow(String),
    #[error("label `{label}` needs stem direction metadata or an image to resolve")]
    UnresolvedGranularity { label: String },
    #[error("vocabulary definition line {line}: {message}")]
    VocabularyFormat { line: usize, message: String },

    #[error("image contains no ink")]
    EmptyImage,
    #[error("class `{class}` does not allow {operation}")]
    AugmentationForbidden { class: String, operation: &'static str },
    #[error("rotation of {0} degrees is outside [-10, 10]")]
    DegreesOutOfRange(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("focus set selects no samples")]
    EmptyFocusSet,

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("score is not finite")]
    ScoreOutOfRange,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("vector is not a probability distribution (sum {0})")]
    NotADistribution(f64),
    #[error("batch needs at least {needed} items, got {got}")]
    BatchTooSmall { needed: usize, got: usize },

    #[error("standard and focused cycles are both zero")]
    BothCyclesZero,
    #[error("batch sizes differ: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("non-finite {component} loss at step {step}")]
    NonFiniteLoss { step: u64, component: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pitch {0} is outside the supported range")]
    PitchOutOfRange(String),
    #[error("symbol bank has no entries for class `{0}`")]
    MissingSymbolClass(String),
    #[error("symbol bank is empty")]
    EmptyBank,

    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("feature vector has zero norm")]
    ZeroVector,

    #[error("training observer failed: {0}")]
    Observer(String),
}

impl Error {
    pub(crate) fn shape(expected: impl core::fmt::Display, found: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
