//! Crate-wide error type.
//!
//! Display messages start with a stable error name (e.g. `EmptyDirectory`)
//! so CLI output and scripts can match on it regardless of the detail text.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- volume I/O ----
    #[error("BadMagic: file does not start with the OCTV magic bytes")]
    BadMagic,
    #[error("UnsupportedVersion: volume format version {0} (expected 1)")]
    UnsupportedVersion(u16),
    #[error("CorruptHeader: {0}")]
    CorruptHeader(&'static str),
    #[error("TruncatedFile: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("TrailingData: {0} unexpected bytes after the voxel payload")]
    TrailingData(u64),
    #[error("UnsupportedBitDepth: {0} (must be 8 or 16)")]
    UnsupportedBitDepth(u8),
    #[error("DimensionOverflow: dimensions must be nonzero and their product below 2^63")]
    DimensionOverflow,
    #[error("EmptyDirectory: no PGM slices found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("MixedDimensions: {path} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    MixedDimensions {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("UnsupportedFormat: {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    // ---- annotations ----
    #[error("MalformedLine: line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("UnknownClassId: line {line}: class id {id} (valid ids are 0..=3)")]
    UnknownClassId { line: usize, id: i64 },
    #[error("OutOfRangeCoordinate: {coord} = {value}")]
    OutOfRangeCoordinate { coord: &'static str, value: f64 },
    #[error("DegenerateAfterClamp: box lies outside the slice")]
    DegenerateAfterClamp,
    #[error("NonSquareBox: line {line}: {w_px:.2}px wide vs {h_px:.2}px tall")]
    NonSquareBox { line: usize, w_px: f64, h_px: f64 },
    #[error("InvalidManifest: {0}")]
    InvalidManifest(String),
    #[error("UnknownVolumeId: {0} is not in the manifest")]
    UnknownVolumeId(String),

    // ---- preprocessing / detection ----
    #[error("BadKernel: kernel size {k} (must be odd and fit the {width}x{height} slice)")]
    BadKernel { k: u32, width: u32, height: u32 },
    #[error("BadConfig: {0}")]
    BadConfig(String),

    // ---- metrics ----
    #[error("DegenerateBox: rectangle has no area")]
    DegenerateBox,
    #[error("NoGroundTruth: no class has any ground-truth box")]
    NoGroundTruth,

    // ---- experiments ----
    #[error("TooFewVolumes: leave-one-out needs at least 2 volumes, got {0}")]
    TooFewVolumes(usize),
    #[error("MissingPredictions: {0}")]
    MissingPredictions(PathBuf),

    // ---- synthesis ----
    #[error("PlacementOverflow: could not place defect {index} without overlap after {retries} retries")]
    PlacementOverflow { index: usize, retries: usize },

    // ---- rendering ----
    #[error("SliceOutOfRange: slice {z} of a volume with depth {depth}")]
    SliceOutOfRange { z: u32, depth: u32 },

    // ---- plumbing ----
    #[error("IoFailure: {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JsonFailure: {path}: {source}")]
    JsonFailure {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// Attach a path to a JSON (de)serialization error.
    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::JsonFailure {
            path: path.into(),
            source,
        }
    }

    /// Attach a line number to an error raised while parsing one label line.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::MalformedLine { reason, .. } => Error::MalformedLine { line, reason },
            Error::UnknownClassId { id, .. } => Error::UnknownClassId { line, id },
            other => other,
        }
    }
}
