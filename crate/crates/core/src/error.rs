use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("corrupt payload: expected {expected} bytes, found {found}")]
    CorruptPayload { expected: usize, found: usize },

    #[error("not a cdc file (bad magic {0:02x?})")]
    NotACdcFile(Vec<u8>),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported raster: {0}")]
    Raster(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("batchnorm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no usable images in {0}")]
    NoData(PathBuf),

    #[error("training diverged at step {step}: {what}")]
    Divergence { step: u64, what: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("study service not ready: {0}")]
    ServiceNotReady(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("http: {0}")]
    Http(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::File { path, source }
    }

    pub fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Error {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
