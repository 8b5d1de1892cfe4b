use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("unknown domain tag {tag:?} at row {row}")]
    UnknownDomainTag { row: usize, tag: String },
    #[error("feature `{0}` is constant on the source rows")]
    ConstantColumn(String),
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid label {value} at index {index} for the {family} family")]
    InvalidLabel {
        index: usize,
        value: f64,
        family: &'static str,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("no convergence at step {step}: residual {residual:e}")]
    NoConvergence { step: usize, residual: f64 },
    #[error("offset file has {actual} rows, expected {expected}")]
    RowCountMismatch { expected: usize, actual: usize },
    #[error("offset file line {line} is not numeric: {value:?}")]
    NonNumericLine { line: usize, value: String },
    #[error("no target rows")]
    EmptyTarget,
    #[error("domain `{0}` has no rows")]
    EmptyDomain(&'static str),
    #[error("need at least 2 rows to estimate moments, got {0}")]
    TooFewRows(usize),
    #[error("covariance smallest eigenvalue {0:e} below floor after repair")]
    DegenerateCovariance(f64),
    #[error("stability threshold pi={pi} must exceed alpha={alpha}")]
    InvalidThreshold { pi: f64, alpha: f64 },
    #[error("truth vector needs at least one positive and one negative")]
    DegenerateTruth,
    #[error("holdout split is empty")]
    EmptyHoldout,
    #[error("feature index {index} out of range for p={p}")]
    IndexOutOfRange { index: usize, p: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) => ErrorClass::Config,
            SingularSystem
            | NoConvergence { .. }
            | DegenerateCovariance(_)
            | InvalidThreshold { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Variant name, used as the `error` field of machine-readable reports.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            MissingColumn(_) => "MissingColumn",
            NonNumericCell { .. } => "NonNumericCell",
            EmptyDataset => "EmptyDataset",
            UnknownDomainTag { .. } => "UnknownDomainTag",
            ConstantColumn(_) => "ConstantColumn",
            DuplicateFeature(_) => "DuplicateFeature",
            DimensionMismatch { .. } => "DimensionMismatch",
            LengthMismatch { .. } => "LengthMismatch",
            InvalidLabel { .. } => "InvalidLabel",
            NonFinite { .. } => "NonFinite",
            SingularSystem => "SingularSystem",
            NoConvergence { .. } => "NoConvergence",
            RowCountMismatch { .. } => "RowCountMismatch",
            NonNumericLine { .. } => "NonNumericLine",
            EmptyTarget => "EmptyTarget",
            EmptyDomain(_) => "EmptyDomain",
            TooFewRows(_) => "TooFewRows",
            DegenerateCovariance(_) => "DegenerateCovariance",
            InvalidThreshold { .. } => "InvalidThreshold",
            DegenerateTruth => "DegenerateTruth",
            EmptyHoldout => "EmptyHoldout",
            IndexOutOfRange { .. } => "IndexOutOfRange",
            InvalidConfig(_) => "InvalidConfig",
            Io { .. } => "Io",
            Csv(_) => "Csv",
            Json(_) => "Json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
