//! Error types shared across the crate.

use thiserror::Error;

/// Errors from the kernel algebra: evaluation, layout handling, and the
/// kernel grammar.
#[derive(Debug, Error)]
pub enum KernelError {
    /// Two input vectors had different dimensions.
    #[error("input dimension mismatch: left has {left} components, right has {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// A raw (exponentiated) hyperparameter was zero or negative.
    #[error("non-positive kernel parameter {name} = {value}")]
    NonPositiveParam { name: &'static str, value: f64 },

    /// Wrong number of raw parameters for a base kernel.
    #[error("{kind} takes {expected} parameters, got {got}")]
    ParamCount {
        kind: &'static str,
        expected: usize,
        got: usize,
    },

    /// A hyperparameter vector does not match the expression it is used with.
    #[error("hyperparameter layout mismatch: {0}")]
    LayoutMismatch(String),

    /// Syntax error in the kernel grammar.
    #[error("kernel parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A name in a kernel string is not one of the base kernels.
    #[error("unknown kernel name `{name}` at byte {offset}")]
    UnknownKernel { name: String, offset: usize },
}

/// Errors from GP regression, hyperparameter optimization, model selection,
/// and the kernel search.
#[derive(Debug, Error)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),

    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimensions(String),

    /// Invalid numeric input (NaN/Inf entries, crossed bounds, empty data).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix expected to be symmetric was not.
    #[error("matrix not symmetric: max |K - K'| = {max_asymmetry:.3e}")]
    NotSymmetric { max_asymmetry: f64 },

    /// Cholesky factorization failed even at the largest jitter tried.
    #[error("matrix not positive definite after jitter up to {last_jitter:.3e}")]
    NotPositiveDefinite { last_jitter: f64 },

    /// Every optimizer restart failed to produce a factorizable start point.
    #[error("all {restarts} optimizer restarts failed at their start points")]
    AllRestartsFailed { restarts: usize },

    /// A finite-difference Hessian probe point could not be evaluated.
    #[error("Hessian evaluation failed: {0}")]
    Hessian(String),

    /// No level-1 search candidate could be scored.
    #[error("kernel search failed: no level-1 candidate could be scored")]
    SearchFailed,

    /// A metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

/// Errors from dataset ingestion, feature construction, splitting, and model
/// persistence.
#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Gp(#[from] GpError),

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` missing from CSV header")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    /// Rows that failed to parse, as (row number, column, reason).
    /// Row numbers are 1-based data rows (the header is row 0).
    #[error("{} row(s) rejected: {}", .0.len(), format_rejections(.0))]
    RowsRejected(Vec<(usize, String, String)>),

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("time series error: {0}")]
    Series(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("model format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file invalid: {0}")]
    ModelInvalid(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_rejections(rows: &[(usize, String, String)]) -> String {
    let shown: Vec<String> = rows
        .iter()
        .take(5)
        .map(|(row, col, why)| format!("row {row} column `{col}`: {why}"))
        .collect();
    let mut out = shown.join("; ");
    if rows.len() > 5 {
        out.push_str(&format!("; and {} more", rows.len() - 5));
    }
    out
}
