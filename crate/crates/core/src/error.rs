use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column '{column}': {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },

    #[error("duplicate cell {0}")]
    DuplicateCell(i64),

    #[error("duplicate record for cell {cell_id} year {year}")]
    DuplicateRecord { cell_id: i64, year: i32 },

    #[error("cell {cell_id}: {field} = {value} outside [{min}, {max}]")]
    OutOfRange {
        cell_id: i64,
        field: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("non-uniform cadence at step {index}: expected {expected_secs} s, found {found_secs} s")]
    NonUniformCadence {
        index: usize,
        expected_secs: i64,
        found_secs: i64,
    },

    #[error("series is missing cells: {0:?}")]
    MissingCells(Vec<i64>),

    #[error("bad binary file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown predictor '{0}'")]
    UnknownPredictor(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("rank-deficient design, dependent columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero standard deviation in {0}")]
    ZeroVariance(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the inputs rather than by the program.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
