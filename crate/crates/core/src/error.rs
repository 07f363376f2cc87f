use thiserror::Error;

/// Errors produced by the re-ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid utterance {id}: {reason}")]
    Utterance { id: String, reason: String },
    #[error("degenerate training: {0}")]
    DegenerateTraining(String),
    #[error("model not trained: {0}")]
    NotTrained(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("value out of domain: {0}")]
    OutOfRange(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
