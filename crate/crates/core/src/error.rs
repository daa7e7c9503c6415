use std::path::PathBuf;

use thiserror::Error;

/// A single CSV row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct RowError {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: file is empty")]
    Empty { path: PathBuf },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{path}: {} bad row(s), first at {}", .errors.len(), .errors[0])]
    Rows { path: PathBuf, errors: Vec<RowError> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CohortError {
    #[error("patient `{patient}` has more than one measurement on {date}")]
    DuplicateMeasurement { patient: String, date: String },
    #[error("patient `{patient}` has a non-finite measurement on {date}")]
    NonFiniteValue { patient: String, date: String },
    #[error("event for patient `{patient}` on {date} lies outside the observation bounds")]
    OutOfBounds { patient: String, date: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("design has no rows: no patient contributes a usable measurement")]
    Empty,
    #[error("tau must be positive, got {0}")]
    InvalidTau(i64),
    #[error("exposure matrix rows ({exposure}) do not match cohort measurements ({cohort})")]
    ShapeMismatch { exposure: usize, cohort: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LassoError {
    #[error("design has no rows")]
    EmptyDesign,
    #[error("design has no nonzero column")]
    AllZeroColumns,
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("regularization path needs at least 2 grid points, got {0}")]
    TooFewLambdas(usize),
    #[error("target support must be at least 1")]
    InvalidTarget,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChangePointError {
    #[error("series of length {len} is too short for a change-point fit (need {min})")]
    TooShort { len: usize, min: usize },
    #[error("series has zero variance; no change point")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ranking contains no positive drugs")]
    NoPositives,
    #[error("ranking contains no negative drugs")]
    NoNegatives,
    #[error("no cutoff K given")]
    NoCutoffs,
    #[error("cutoff K must be at least 1")]
    ZeroCutoff,
    #[error("drug `{0}` is labeled both decrease and increase")]
    ConflictingLabel(String),
    #[error("unknown label `{label}` for drug `{drug}`")]
    UnknownLabel { drug: String, label: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("config produces no measurements in expectation")]
    NoMeasurements,
}

/// Union of every module error, for callers that run the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
