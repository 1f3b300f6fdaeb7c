use thiserror::Error;

/// Unified error type for data ingestion, model fitting, and evaluation.
///
/// Row numbers in data errors are 1-based positions among the data rows,
/// matching how a reader would count lines below a CSV header.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column '{0}' not found in header")]
    MissingColumn(String),

    #[error("row {row}, column '{col}': cannot parse '{value}' as a finite number")]
    NonNumericCell { row: usize, col: String, value: String },

    #[error("row {row}, column '{col}': missing value")]
    MissingValue { row: usize, col: String },

    #[error("row {row}: treatment must be exactly 0 or 1")]
    InvalidTreatmentValue { row: usize },

    #[error("row {row}: propensity must lie strictly between 0 and 1")]
    InvalidPropensity { row: usize },

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("treatment arm {arm} has no rows")]
    MissingArm { arm: u8 },

    #[error("treatment arm {arm} has {have} rows, need at least {need}")]
    TooFewRowsPerArm { arm: u8, have: usize, need: usize },

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("solver did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("feature vector has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("design is degenerate; closed-form solution undefined")]
    DegenerateDesign,

    #[error("minimizer stayed pinned to the bracket edge near tau = {tau}")]
    OptimizerBoundaryHit { tau: f64 },

    #[error("fold {fold} of repetition {rep} lost a treatment arm")]
    FoldArmMissing { rep: usize, fold: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("repetition {rep}, outer fold {outer}{}: {source}", inner.map(|j| format!(", inner fold {j}")).unwrap_or_default())]
    FitContext {
        rep: usize,
        outer: usize,
        inner: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_fit_context(self, rep: usize, outer: usize, inner: Option<usize>) -> Error {
        Error::FitContext {
            rep,
            outer,
            inner,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
