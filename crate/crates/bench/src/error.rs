use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] msphs::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown method id `{0}` (expected ms-phs-ab-{{1,2,3}}, ms-ode-ab-{{1,2,3}}, gp-phs-loess-2 or gp-phs-savgol-3)")]
    UnknownMethod(String),
    #[error("evaluation mesh is empty")]
    EmptyMesh,
    #[error("every mesh point has a near-zero field norm; cosine distance is undefined")]
    AllPointsExcluded,
    #[error("mean posterior variance is zero; error-uncertainty ratio is undefined")]
    ZeroVariance,
    #[error("results store at {0} holds no successful runs")]
    EmptyStore(String),
    #[error("length mismatch: {expected} truth values for {actual} predictions")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl BenchError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable category used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Model(_) => "model",
            BenchError::Config(_) | BenchError::Toml(_) => "config",
            BenchError::UnknownMethod(_) => "unknown_method",
            BenchError::EmptyMesh => "empty_mesh",
            BenchError::AllPointsExcluded => "all_points_excluded",
            BenchError::ZeroVariance => "zero_variance",
            BenchError::EmptyStore(_) => "empty_store",
            BenchError::LengthMismatch { .. } => "length_mismatch",
            BenchError::Io { .. } => "io",
            BenchError::Json(_) => "json",
            BenchError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
