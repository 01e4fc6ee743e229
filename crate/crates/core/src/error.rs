use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("raster contains a non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("bad magic bytes {found:?}, expected \"LFR1\"")]
    BadMagic { found: [u8; 4] },

    #[error("malformed raster file: {0}")]
    Malformed(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("value {value} at index {index} is outside [0, 1]")]
    RangeViolation { index: usize, value: f64 },

    #[error("weights at pixel {pixel}, channel {channel} are not a valid simplex (sum {sum})")]
    SimplexViolation {
        pixel: usize,
        channel: usize,
        sum: f64,
    },

    #[error("invalid raster dimensions {height}x{width}: {reason}")]
    BadDimensions {
        height: usize,
        width: usize,
        reason: &'static str,
    },

    #[error("invalid lenticule grid: {0}")]
    InvalidGrid(String),

    #[error("detector scale {0} px is outside [0.5, 5]")]
    ScaleOutOfRange(f64),

    #[error("no dominant spectral peak (confidence {confidence:.3} <= {threshold})")]
    NoDominantPeak { confidence: f64, threshold: f64 },

    #[error("only {found} lenticule boundaries detected, need at least 4")]
    TooFewPeaks { found: usize },

    #[error("fitted boundaries cross each other (boundary {index})")]
    IllPosedFit { index: usize },

    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,

    #[error("grid was fitted on a {grid:?} image but the scan is {scan:?}")]
    GridImageMismatch {
        grid: (usize, usize),
        scan: (usize, usize),
    },

    #[error("resampled height {0} is below the minimum of 8 rows")]
    DegenerateOutput(usize),

    #[error("coefficient tensor is {tensor:?} but the stripe image is {stripe:?}")]
    TensorDimMismatch {
        tensor: (usize, usize),
        stripe: (usize, usize),
    },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("source image is too narrow for 8 lenticules of width {mean_width} px (width {width})")]
    SourceTooNarrow { width: usize, mean_width: f64 },

    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimMismatch { a: (usize, usize), b: (usize, usize) },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
