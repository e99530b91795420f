use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up. `detail` names the offending axes.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("shape inference failed between {from} and {to}: {detail}")]
    ShapeInference {
        from: String,
        to: String,
        detail: String,
    },

    #[error("layer {index} is {kind}, expected a conv2d layer")]
    NotConv { index: usize, kind: &'static str },

    #[error("filter {filter}: {source}")]
    Filter {
        filter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("inconsistent prune plan: {0}")]
    Plan(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by malformed or unreadable files.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Truncated { .. }
                | Error::Manifest(_)
                | Error::ShapeInference { .. }
        )
    }

    /// True for numeric failures (non-finite values, divergence).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Diverged { .. } => true,
            Error::Filter { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
