//! Error types, one enum per subsystem, unified under [`PealError`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("non-finite value produced by {op} (flat index {index})")]
    NonFinite { op: &'static str, index: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("invalid {what}: {details}")]
    Invalid { what: &'static str, details: String },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("mode/input mismatch: {0}")]
    ModeInputMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("feature dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("unknown class id {class} (index covers classes 0..{num_classes})")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("duplicate sample id {0}")]
    DuplicateId(usize),
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("negative probability {value} at position {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, outside tolerance {tolerance}")]
    ProbabilitySum { sum: f64, tolerance: f64 },
    #[error("pool of candidate samples is empty")]
    EmptyPool,
    #[error("unknown strategy \"{0}\" (expected random, entropy or featdist)")]
    UnknownStrategy(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:?}, got {got:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated file: needed {needed} more bytes for {what}")]
    Truncated { what: &'static str, needed: usize },
    #[error("label {label} out of range 0..{num_classes} at record {record}")]
    LabelOutOfRange { record: usize, label: u32, num_classes: u32 },
    #[error("non-finite feature value at record {record}")]
    NaNFeature { record: usize },
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),
    #[error("sample {0} is already labeled")]
    AlreadyLabeled(usize),
    #[error("sample {0} belongs to the test split and cannot be annotated")]
    TestSplitId(usize),
    #[error("unknown sample id {0}")]
    UnknownId(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("annotation budget {budget} exceeds pool size {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("pool partition violated after cycle {cycle}: {details}")]
    PartitionViolation { cycle: usize, details: String },
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Workspace-wide error, converted from any subsystem error.
#[derive(Debug, Error)]
pub enum PealError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}
