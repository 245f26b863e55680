use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("segments share exponent {0}; no crossover exists")]
    NoCrossover(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unit mismatch: expected {expected}, found {found}")]
    UnitMismatch { expected: String, found: String },

    #[error("unknown unit label `{0}`")]
    UnknownUnit(String),

    #[error("series is not uniformly sampled; resample before spectral estimation")]
    ResamplingRequired,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by user input or configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_config_error();
        }
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::UnknownUnit(_)
                | Error::UnitMismatch { .. }
                | Error::InvalidModel(_)
                | Error::Format(_)
        )
    }
}

/// Tag errors with the pipeline stage that produced them.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
