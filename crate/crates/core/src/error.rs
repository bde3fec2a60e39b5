use std::path::PathBuf;

use crate::imagecore::ColorSpace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported PNG variant in {path}: {feature}")]
    UnsupportedPng { path: PathBuf, feature: String },

    #[error("failed to encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("expected {expected:?} image, got {found:?}")]
    ColorSpace { expected: ColorSpace, found: ColorSpace },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bucket {bucket} out of range (bank has {count} buckets)")]
    BucketOutOfRange { bucket: usize, count: usize },

    #[error("bad magic: not a filterbank file")]
    BadMagic,

    #[error("unsupported filterbank version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("filterbank file truncated")]
    Truncated,

    #[error("non-finite tap in level {level}, channel {channel}, bucket {bucket}")]
    NonFiniteTap {
        level: usize,
        channel: usize,
        bucket: usize,
    },

    #[error("malformed filterbank: {0}")]
    Structural(String),

    #[error("least-squares solve failed for bucket {bucket} (channel {channel}) after regularization")]
    Solve { bucket: usize, channel: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bank mismatch: {0}")]
    BankMismatch(String),
}

impl Error {
    /// Stable snake_case tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Decode { .. } => "decode",
            Error::UnsupportedPng { .. } => "unsupported_png",
            Error::Encode { .. } => "encode",
            Error::ColorSpace { .. } => "color_space",
            Error::InvalidImage(_) => "invalid_image",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::BucketOutOfRange { .. } => "bucket_out_of_range",
            Error::BadMagic => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated => "truncated",
            Error::NonFiniteTap { .. } => "non_finite_tap",
            Error::Structural(_) => "structural",
            Error::Solve { .. } => "solve",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::BankMismatch(_) => "bank_mismatch",
        }
    }
}
