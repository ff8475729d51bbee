use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("split needs {needed} scenarios (train {train} + eval {eval}) but only {available} are available")]
    SplitSize {
        needed: usize,
        train: usize,
        eval: usize,
        available: usize,
    },

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown framework `{name}`; valid frameworks: {valid}")]
    UnknownFramework { name: String, valid: String },

    #[error("framework `{0}` has no aligned actions in the scenario set")]
    NoAlignedActions(String),

    #[error("evaluation set shares {count} scenario id(s) with the training set (first: {first})")]
    Contamination { count: usize, first: String },

    #[error("prompt template contains framework keyword `{0}`")]
    TemplateContamination(String),

    #[error("token `{0}` is not in the policy vocabulary")]
    UnknownToken(String),

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
