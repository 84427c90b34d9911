use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection, masking, inpainting and evaluation stages.
#[derive(Debug, Error)]
pub enum FlareError {
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("window centered at ({cx:.1}, {cy:.1}) with radius {radius} contains no pixel")]
    EmptyWindow { cx: f64, cy: f64, radius: f64 },

    #[error("point ({x}, {y}) lies outside the search window")]
    OutOfWindow { x: usize, y: usize },

    #[error("point ({x}, {y}) lies outside the {width}x{height} domain")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("image {width}x{height} is too small for sigma_min {sigma_min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        sigma_min: f64,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("hole covers {fraction:.1}% of the image, limit is 50%")]
    HoleTooLarge { fraction: f64 },

    #[error("no fully known patch is available as an exemplar")]
    NoSourcePatches,

    #[error("dice coefficient undefined: both masks are empty")]
    BothEmpty,

    #[error("flare color L={l:.1} a*={a:.1} b*={b:.1} is outside the sRGB gamut")]
    SpecOutOfGamut { l: f64, a: f64, b: f64 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlareError>;

impl FlareError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlareError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        FlareError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
