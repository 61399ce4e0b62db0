use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpriteError>;

#[derive(Debug, Error)]
pub enum SpriteError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("estimation failed for exposure {index}: {reason}")]
    Estimation { index: usize, reason: String },

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SpriteError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SpriteError {
    pub fn dims(expected: impl ToString, got: impl ToString) -> Self {
        SpriteError::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        SpriteError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &SpriteError {
        match self {
            SpriteError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            SpriteError::Estimation { .. } => 3,
            SpriteError::Divergence(_) => 4,
            _ => 2,
        }
    }
}
