use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data violated a structural requirement.
    #[error("invalid data: {0}")]
    Data(String),

    /// Input data referenced a schema element that does not exist.
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// The fixed-effects design is not of full column rank.
    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    /// A precision matrix could not be factorized even after jitter.
    #[error("{stage}: precision matrix is not positive definite (min diagonal {min_diag:.3e}, max diagonal {max_diag:.3e})")]
    NotPositiveDefinite {
        stage: &'static str,
        min_diag: f64,
        max_diag: f64,
    },

    /// An iterative update produced NaN or infinity.
    #[error("{stage}: non-finite value at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    /// An engine step failed at a given iteration.
    #[error("{engine} iteration {iteration}: {source}")]
    Iteration {
        engine: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// One stick of a multinomial fit failed.
    #[error("stick {stick}: {source}")]
    Stick {
        stick: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure originates in numerics rather than in the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } => true,
            Error::Iteration { source, .. } | Error::Stick { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
