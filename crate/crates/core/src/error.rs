use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report. Variant names double as the stable
/// error identifiers printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("BadMagic: input does not start with the NPY magic string")]
    BadMagic,
    #[error("UnsupportedDescr: {0}")]
    UnsupportedDescr(String),
    #[error("HeaderMismatch: {0}")]
    HeaderMismatch(String),
    #[error("FortranOrder: column-major arrays are not supported")]
    FortranOrder,
    #[error("ShapeError: {0}")]
    Shape(String),
    #[error("RangeError: element {value} at flat index {index} is outside [0, 1]")]
    Range { index: usize, value: f64 },
    #[error("RowSumError: row (sample {sample}, item {item}) sums to {sum}")]
    RowSum { sample: usize, item: usize, sum: f64 },
    #[error("IndexError: label {value} at position {index} is not a class id in [0, {classes})")]
    Index { index: usize, value: i64, classes: usize },
    #[error("BinaryError: multi-label entry {value} at flat index {index} is not 0 or 1")]
    Binary { index: usize, value: i64 },
    #[error("TaskMismatch: expected {expected}, got {found}")]
    TaskMismatch { expected: String, found: String },
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("NoPositives: scores have no positive item")]
    NoPositives,
    #[error("DegenerateClass: AUC needs at least one positive and one negative")]
    DegenerateClass,
    #[error("AllClassesSkipped: no class has both positives and negatives")]
    AllClassesSkipped,
    #[error("EmptyRetained: fraction {0} retains no items")]
    EmptyRetained(f64),
    #[error("EmptyInput: {0}")]
    EmptyInput(String),
    #[error("NonFinite: {0}")]
    NonFinite(String),
    #[error("DimMismatch: {0}")]
    DimMismatch(String),
    #[error("StrategyMismatch: {0}")]
    StrategyMismatch(String),
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("JsonError: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier of the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::BadMagic => "BadMagic",
            Error::UnsupportedDescr(_) => "UnsupportedDescr",
            Error::HeaderMismatch(_) => "HeaderMismatch",
            Error::FortranOrder => "FortranOrder",
            Error::Shape(_) => "ShapeError",
            Error::Range { .. } => "RangeError",
            Error::RowSum { .. } => "RowSumError",
            Error::Index { .. } => "IndexError",
            Error::Binary { .. } => "BinaryError",
            Error::TaskMismatch { .. } => "TaskMismatch",
            Error::Domain(_) => "DomainError",
            Error::NoPositives => "NoPositives",
            Error::DegenerateClass => "DegenerateClass",
            Error::AllClassesSkipped => "AllClassesSkipped",
            Error::EmptyRetained(_) => "EmptyRetained",
            Error::EmptyInput(_) => "EmptyInput",
            Error::NonFinite(_) => "NonFinite",
            Error::DimMismatch(_) => "DimMismatch",
            Error::StrategyMismatch(_) => "StrategyMismatch",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Process exit code: 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
