use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelParams;

/// Errors raised while loading and splitting data.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed row at line {line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}: non-UTF8 identifier at line {line}")]
    NonUtf8 { path: PathBuf, line: u64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unknown {kind} identifier `{id}`")]
    UnknownIdentifier { kind: &'static str, id: String },
    #[error("event {index}: t_start {t_start} is after t_end {t_end}")]
    InvalidInterval { index: usize, t_start: i64, t_end: i64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{missing} items have no feature row, allowance is {allowed}")]
    TooManyMissing { missing: usize, allowed: usize },
    #[error("feature file lists {found} rows but only {expected} items are indexed")]
    ItemCountMismatch { expected: usize, found: usize },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("user {0} has no records")]
    UserWithoutRecords(usize),
    #[error("min_train_count must be at least 1")]
    InvalidThreshold,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

/// Errors raised by graph construction, fusion and convolution.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k = {k} is out of range for {n_items} items (need 1 <= k < n_items)")]
    KOutOfRange { k: usize, n_items: usize },
    #[error("empty feature matrix")]
    EmptyFeatures,
    #[error("negative edge weight {weight} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, weight: f64 },
    #[error("invalid edge ({row}, {col}): {reason}")]
    InvalidEdge {
        row: usize,
        col: usize,
        reason: &'static str,
    },
    #[error("graph size mismatch: {left} vs {right} items")]
    SizeMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sigma must lie in (0, 1], got {0}")]
    InvalidSigma(f64),
    #[error("{graphs} graphs but {weights} modality weights")]
    ModalityCountMismatch { graphs: usize, weights: usize },
    #[error("non-finite value in convolution layer {layer}, row {row}")]
    NonFinite { layer: usize, row: usize },
}

/// Errors raised during training.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty triple list")]
    EmptyTriples,
    #[error("user {0} has interacted with every item; no negative available")]
    NoNegativeAvailable(usize),
    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: &'static str },
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged {
        epoch: usize,
        last_good: Box<ModelParams>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Errors raised by metrics and the evaluation protocol.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("no evaluable users in segment `{0}`")]
    NoEvaluableUsers(&'static str),
    #[error("cutoff k must be at least 1")]
    InvalidK,
}

/// Errors raised when reading or writing checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Crate-level error; the display prefix names the module that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("modality_graph: {0}")]
    Graph(#[from] GraphError),
    #[error("model_train: {0}")]
    Train(#[from] TrainError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and I/O problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Ingest(_) | Error::Checkpoint(_) => 2,
            Error::Graph(_) | Error::Train(_) | Error::Eval(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
