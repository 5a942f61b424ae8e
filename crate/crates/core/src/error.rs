use thiserror::Error;

/// Errors raised anywhere in the laboratory.
///
/// Variants split into two families: validation failures (bad parameters,
/// malformed inputs, broken contracts) and computation failures (numerical
/// breakdown at run time). [`Error::is_validation`] tells them apart for the
/// command-line exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("partition invariant violated: {0}")]
    Partition(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("bootstrap failed in {failures} of {reps} replications")]
    Bootstrap { failures: usize, reps: usize },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Domain(_)
                | Error::Partition(_)
                | Error::Missing(_)
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Partition(_) => "partition",
            Error::Convergence { .. } => "convergence",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Bootstrap { .. } => "bootstrap",
            Error::Missing(_) => "missing",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
