use thiserror::Error;

/// Errors surfaced by the morphing pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite value in {component}: {detail}")]
    NonFinite { component: String, detail: String },

    #[error("missing config key: {0}")]
    MissingConfigKey(String),

    #[error("invalid config value for `{key}`: {detail}")]
    InvalidConfigValue { key: String, detail: String },

    #[error("archive parse error at byte offset {offset}: {detail}")]
    ArchiveParse { offset: usize, detail: String },

    #[error("archive is missing tensor `{0}`")]
    ArchiveMissingTensor(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
