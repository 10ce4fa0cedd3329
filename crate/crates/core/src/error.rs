use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the library.
///
/// Variants are grouped into the CLI exit-status families through
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: {0}")]
    EmptyFile(PathBuf),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("non-numeric value {value:?} in column {column:?} at row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("invalid label {value:?} at row {row}: expected 0 or 1")]
    InvalidLabel { row: usize, value: String },
    #[error("confounder column {0:?} looks continuous; supply a discretization")]
    ContinuousConfounder(String),
    #[error("value {value} lies outside every discretization interval")]
    OutOfSupport { value: f64 },
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("cell (level {level}, label {label}) has {size} samples; cannot place samples on both sides")]
    CellTooSmall {
        level: usize,
        label: u8,
        size: usize,
    },
    #[error("input contains a single class")]
    SingleClass,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("weighted normal equations are singular")]
    Singular,
    #[error("degenerate null distribution: {0}")]
    DegenerateNull(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("permutation iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("model format error: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the CLI.
    ///
    /// | code | meaning |
    /// |------|---------|
    /// | 1 | io / other |
    /// | 2 | usage or configuration |
    /// | 3 | schema / input data |
    /// | 4 | numeric (singular fit, degenerate null) |
    /// | 5 | infeasible request |
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::Csv(_) => 1,
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::EmptyFile(_)
            | Error::MissingColumn(_)
            | Error::Schema(_)
            | Error::NonNumeric { .. }
            | Error::InvalidLabel { .. }
            | Error::ContinuousConfounder(_)
            | Error::OutOfSupport { .. }
            | Error::InvalidDiscretization(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidDataset(_)
            | Error::SingleClass
            | Error::EmptyInput
            | Error::ModelFormat(_) => 3,
            Error::Singular | Error::DegenerateNull(_) => 4,
            Error::CellTooSmall { .. } | Error::Infeasible(_) => 5,
            Error::Iteration { source, .. } | Error::Replicate { source, .. } => source.exit_code(),
        }
    }
}
