use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {got})")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("layer `{layer}`: {msg}")]
    Weights { layer: String, msg: String },

    #[error("unknown backbone `{0}` (expected one of: {1})")]
    UnknownBackbone(String, String),

    #[error("config line {line}: {msg}")]
    ConfigSyntax { line: usize, msg: String },

    #[error("config field `{field}`: {msg}")]
    ConfigValue { field: String, msg: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, dim: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            op,
            dim,
            expected,
            got,
        }
    }

    /// True for errors caused by user-supplied configuration or arguments,
    /// as opposed to I/O failures or broken internal invariants.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Invariant(_))
    }
}
