use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read input stream: {0}")]
    Ingest(#[source] std::io::Error),

    #[error("cannot write output: {0}")]
    Write(#[source] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mapped column `{0}` not found in input header")]
    MissingColumn(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("trend error: need at least {required} reference years, got {available}")]
    Trend { required: usize, available: usize },

    #[error("singular growth rate: trend value is zero at year {0}")]
    Singularity(i32),

    #[error("bias factor undefined: every reference year has a non-positive week-53 fit")]
    BiasFactor,

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("period {period} is missing year {year}")]
    Period { period: String, year: i32 },

    #[error("no population denominator for period {period}, stratum {stratum}")]
    Denominator { period: String, stratum: String },

    #[error("ratio undefined: {0}")]
    Undefined(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
