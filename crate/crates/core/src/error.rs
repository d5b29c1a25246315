use thiserror::Error;

/// Errors produced by every stage of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty feature set: every feature exceeds the missing-value threshold {threshold}")]
    EmptyFeatureSet { threshold: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("column `{0}` cannot be imputed: it has no observed values")]
    Unimputable(String),

    #[error("complete data required but {0} missing cells found")]
    IncompleteData(usize),

    #[error("not enough subjects: {0}")]
    TooFewGroups(String),

    #[error("not enough data: {0}")]
    TooFewRows(String),

    #[error("malformed input at record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("artifact: {0}")]
    Artifact(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Tags an error with the pipeline stage it came from.
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = pipeline stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Stage { .. } => 4,
            _ => 3,
        }
    }
}

/// Extension for attaching a stage name to a fallible call.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            already @ Error::Stage { .. } => already,
            other => other.in_stage(stage),
        })
    }
}
