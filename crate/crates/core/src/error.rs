use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Spatial axis, used to name the offending dimension in errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Height => f.write_str("height"),
            Axis::Width => f.write_str("width"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("{axis} {len} is not divisible by scale {scale}")]
    NotDivisible { axis: Axis, len: usize, scale: usize },

    #[error("dimension mismatch between {what}: {left:?} vs {right:?}")]
    DimensionMismatch {
        what: &'static str,
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("HR size {hr:?} is not an integral multiple of LR size {lr:?}")]
    NonIntegralRatio { lr: (usize, usize), hr: (usize, usize) },

    #[error("index ({y}, {x}) outside {height}x{width} grid")]
    OutOfBounds {
        y: usize,
        x: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("payload pixel ({y}, {x}) is not on the probability simplex (sum {sum}, min {min})")]
    SimplexViolation { y: usize, x: usize, sum: f64, min: f64 },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("guidance value {value} at flat index {index} is outside [0, 1]")]
    GuidanceRange { index: usize, value: f32 },

    #[error("fitted parameter escaped its sanity range at LR pixel {index}: {detail}")]
    ParameterEscape { index: usize, detail: String },

    #[error("kernel field was fit at scale {field} but the render pair has scale {render}")]
    ScaleMismatch { field: usize, render: usize },

    #[error("valid mask selects no pixels")]
    EmptyMask,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported bit depth {0}")]
    UnsupportedBitDepth(u8),

    #[error("unsupported image layout: {0}")]
    UnsupportedLayout(String),

    #[error("malformed array header: {0}")]
    MalformedHeader(String),

    #[error("unsupported dtype {0:?}, expected '<f4'")]
    DtypeMismatch(String),

    #[error("array rank {0} not supported (expected 2 or 3, or 1-4 with leading unit dims)")]
    ShapeRank(usize),

    #[error("kernel field sidecar {path} missing or unreadable: {reason}")]
    MissingSidecar { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::ParameterEscape { .. }
        )
    }
}
