use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Malformed or inconsistent configuration; the CLI maps this to exit code 2.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cita::error::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl PipelineError {
    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }

    pub fn is_config(&self) -> bool {
        match self {
            PipelineError::Config(_) => true,
            PipelineError::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Tags errors from one stage of a runner.
pub trait StageExt<T> {
    fn stage(self, name: impl Into<String>) -> Result<T>;
}

impl<T, E: Into<PipelineError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, name: impl Into<String>) -> Result<T> {
        self.map_err(|e| PipelineError::Stage {
            stage: name.into(),
            source: Box::new(e.into()),
        })
    }
}
