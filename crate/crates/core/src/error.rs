use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("log of non-positive value {value} at index {index}")]
    LogDomain { value: f64, index: usize },

    #[error("backward requires a scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("every action is masked out in row {row}")]
    AllMasked { row: usize },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("parameter sets do not match: {0}")]
    ParamMismatch(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("action {action} is not available to agent {agent}")]
    UnavailableAction { agent: usize, action: usize },

    #[error("episode already finished; call reset")]
    EpisodeOver,

    #[error("enumeration of {requested} joint actions exceeds the cap of {cap}")]
    EnumerationCap { requested: u128, cap: u128 },

    #[error("malformed episode: {0}")]
    MalformedEpisode(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted after {0} consecutive non-finite losses")]
    Diverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
