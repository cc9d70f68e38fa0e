use thiserror::Error;

/// Errors produced by the GeoShapley engine.
#[derive(Debug, Error)]
pub enum GeoShapError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("capacity exceeded: {what} = {value} exceeds the limit of {limit}")]
    Capacity {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("predictor failure: {0}")]
    Predictor(String),

    #[error("predictor failed on coalition {coalition:#b}: {source}")]
    Coalition {
        coalition: u64,
        #[source]
        source: Box<GeoShapError>,
    },

    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<GeoShapError>,
    },

    #[error("bridge protocol error: {message} (line: {line:?})")]
    Protocol { message: String, line: String },

    #[error("rank-deficient system, deficient columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GeoShapError {
    /// The innermost error after peeling instance/coalition context.
    pub fn root(&self) -> &GeoShapError {
        match self {
            GeoShapError::Coalition { source, .. } | GeoShapError::Instance { source, .. } => {
                source.root()
            }
            other => other,
        }
    }
}

pub type Result<T, E = GeoShapError> = std::result::Result<T, E>;
