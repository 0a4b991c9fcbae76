use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CmosError>;

#[derive(Debug, Error)]
pub enum CmosError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("non-numeric cell at row {row}, column '{column}': {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value at row {row}, column '{column}'")]
    NonFinite { row: usize, column: String },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("no numeric columns in {}", .0.display())]
    NoNumericColumns(PathBuf),

    #[error("duplicate channel name '{0}'")]
    DuplicateChannel(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{0} is not divisible by {1}")]
    NotDivisible(&'static str, &'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no window fits: {0}")]
    NoWindow(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero variance series")]
    ConstantSeries,

    #[error("no local maximum of the autocorrelation in [2, {0}]")]
    NoPeriod(usize),

    #[error("all averaging weights are zero")]
    ZeroWeights,

    #[error("non-finite {what} at {location}")]
    NonFiniteValue { what: &'static str, location: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CmosError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CmosError::Io {
            path: path.into(),
            source,
        }
    }
}
