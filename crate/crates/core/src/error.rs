use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkdanError {
    #[error(transparent)]
    Tensor(#[from] diffcore::DiffError),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("training diverged at epoch {epoch}: {term} is not finite")]
    Training { epoch: usize, term: &'static str },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SkdanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Tensor(diffcore::DiffError::Config(_)) | Self::Config(_) => "config",
            Self::Tensor(_) => "dimension",
            Self::Schema(_) => "schema",
            Self::Data(_) => "data",
            Self::Spec(_) => "spec",
            Self::Training { .. } => "training",
            Self::Format { .. } | Self::Csv(_) | Self::Json(_) => "format",
            Self::Io { .. } => "io",
        }
    }

    /// Process exit code for [`Self::category`].
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "schema" => 3,
            "data" => 4,
            "spec" => 5,
            "dimension" => 6,
            "training" => 7,
            "format" => 8,
            "io" => 9,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SkdanError>;
