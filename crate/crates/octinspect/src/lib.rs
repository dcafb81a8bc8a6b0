//! Defect inspection for volumetric OCT scans of 3D-printed parts.
//!
//! The crate covers the full loop from raw data to evaluation numbers:
//! volume I/O ([`volume`]), bounding-box annotations ([`annotation`]),
//! slice preprocessing ([`preprocess`]), a classical anomaly-map detector
//! ([`detector`]), detection metrics ([`metrics`]), synthetic test volumes
//! ([`synth`]), leave-one-out experiments ([`experiment`]) and slice
//! rendering ([`render`]). The `octinspect` binary exposes all of it as
//! subcommands.

pub mod annotation;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod preprocess;
pub mod render;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
