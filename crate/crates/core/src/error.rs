use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("image {0} has zero area")]
    ZeroAreaImage(PathBuf),
    #[error("bounding box {0:?} does not intersect the frame")]
    BoxOutsideFrame(crate::imaging::BoundingBox),
    #[error("degenerate affine transform (|det| = {0})")]
    DegenerateTransform(f64),
    #[error("frame too small to place negative samples")]
    NoNegativeSpace,
    #[error("fern bit count {0} exceeds 16")]
    TooManyBits(usize),
    #[error("fern code {code} out of range for {bins} bins")]
    CodeOutOfRange { code: usize, bins: usize },
    #[error("patch is {got}x{got} but {want}x{want} expected")]
    PatchSizeMismatch { got: u32, want: u32 },
    #[error("patch size {patch} incompatible with HOG cell size {cell}")]
    HogGeometry { patch: u32, cell: u32 },
    #[error("descriptor dimension {got} does not match model dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("SVM training set contains only one class")]
    SingleClass,
    #[error("hard sample buffer is empty")]
    EmptyBuffer,
    #[error("zeta ({zeta}) and margin count ({margins}) misaligned with buffer size {entries}")]
    MisalignedMargins {
        zeta: usize,
        margins: usize,
        entries: usize,
    },
    #[error("no seed boxes given")]
    NoSeeds,
    #[error("frame stream is empty")]
    EmptyStream,
    #[error("all scaled windows fell below the 8 px minimum")]
    AllScalesDropped,
    #[error("synthetic object {0} does not fit in the frame")]
    ObjectTooLarge(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("model file error: {0}")]
    ModelFormat(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
