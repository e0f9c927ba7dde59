//! Error type shared across the library.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough context
//! (paths, row/column identifiers, offending values) that a CLI can print the
//! message verbatim and the user knows what to fix.

use std::path::PathBuf;

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong, from I/O to numerical divergence.
#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem failure, tagged with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A cell could not be parsed as a number (or the CSV is malformed).
    #[error("csv parse error at data row {row}, column {column}: {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },

    /// JSON (de)serialization failure, tagged with the path involved.
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// The input has no rows or no columns.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A column's observed values have zero variance, so it cannot be
    /// standardized.
    #[error("column {name} is constant over its observed cells and cannot be standardized")]
    ConstantColumn { name: String },

    /// A column has no observed cells at all.
    #[error("column {name} has no observed cells")]
    EmptyColumn { name: String },

    /// Every cell in the matrix is missing.
    #[error("input contains no observed cells")]
    NoObservedData,

    /// A masking request asked for more cells than a row has observed.
    #[error(
        "row {row_id} has {observed} observed cells but masking requested {requested}"
    )]
    InsufficientObserved {
        row_id: String,
        observed: usize,
        requested: usize,
    },

    /// Dimensions of two arguments do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value is out of range or inconsistent. The message
    /// lists every violation, one per line.
    #[error("invalid configuration:\n{0}")]
    InvalidConfig(String),

    /// A checkpoint or manifest file is malformed.
    #[error("corrupt artifact {path}: {message}")]
    CorruptArtifact { path: PathBuf, message: String },

    /// Refusing to overwrite an existing artifact without explicit consent.
    #[error("refusing to overwrite existing artifact {path} (pass overwrite to replace it)")]
    AlreadyExists { path: PathBuf },

    /// A required artifact from an earlier pipeline stage is absent.
    #[error("missing {what} (produced by the {stage} stage); run that stage first")]
    MissingArtifact { what: String, stage: String },

    /// A forward/backward pass or a loss produced NaN or infinity.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Training diverged; reported with the position so runs can be triaged.
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// All importance weights underflowed to zero.
    #[error(
        "degenerate importance weights: maximum log-weight {max_log_weight} underflows; \
         the proposal is too far from the target"
    )]
    DegenerateWeights { max_log_weight: f64 },

    /// Imputation failed for specific rows; lists which ones and why.
    #[error("imputation failed for {count} row(s):\n{details}")]
    RowFailures { count: usize, details: String },

    /// Too few imputation draws to resolve the requested quantile.
    #[error(
        "{required} draws are required to resolve level {level} but only {available} are available"
    )]
    TooFewDraws {
        level: f64,
        required: usize,
        available: usize,
    },

    /// A cross-validation job failed; tags the failure with its grid cell.
    #[error("cross-validation job (copy {copy}, beta {beta}) failed: {source}")]
    CvJob {
        copy: usize,
        beta: f64,
        source: Box<Error>,
    },

    /// Model fitting failed on specific imputation draws; lists which ones.
    #[error("model fitting failed for {count} draw(s):\n{details}")]
    DrawFailures { count: usize, details: String },
}

impl Error {
    /// Convenience constructor for I/O errors tagged with their path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Convenience constructor for JSON errors tagged with their path.
    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
