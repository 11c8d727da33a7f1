use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported version {found} at byte {offset}")]
    BadVersion { offset: u64, found: u32 },

    #[error("negative value {value} at byte {offset}")]
    NegativeValue { offset: u64, value: f32 },

    #[error("non-finite value at byte {offset}")]
    NonFiniteValue { offset: u64 },

    #[error("file truncated at byte {offset}: needed {needed} more bytes")]
    TruncatedFile { offset: u64, needed: u64 },

    #[error("malformed payload at byte {offset}: {message}")]
    Malformed { offset: u64, message: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("duplicate image id: {0}")]
    DuplicateImageId(String),

    #[error("unknown class: {0}")]
    UnknownClass(String),

    #[error("no patterns collected for class {0}")]
    EmptyPool(String),

    #[error("region grids do not match")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pool of {n} patterns is too small (need at least {required})")]
    PoolTooSmall { n: usize, required: usize },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("truth file missing: {0}")]
    TruthFileMissing(PathBuf),

    #[error("annotation for class {class} is incomplete: {message}")]
    IncompleteAnnotation { class: String, message: String },

    #[error("class mismatch: {0} vs {1}")]
    ClassMismatch(String, String),

    #[error("cluster index {index} out of range (k = {k})")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("cannot build a box from an empty component")]
    EmptyComponent,

    #[error("no ground truth for image {image} class {class}")]
    MissingGroundTruth { image: String, class: String },

    #[error("no improvement value for class {0}")]
    MissingImprovement(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical core rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NoConvergence(_))
    }
}
