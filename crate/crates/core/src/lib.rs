//! Rotation-insensitive iris recognition.
//!
//! The pipeline runs from unwrapped (normalized) iris images through a
//! Maxout CNN with deformable sampling, a trainable VLAD aggregation layer
//! and a two-layer classifier head. The 256-d output of the first head layer
//! is the matching feature; summing residuals over all spatial positions
//! makes it insensitive to eye rotation, which shows up as a circular column
//! shift of the normalized image.
//!
//! Modules:
//! - [`iris`]: rubber-sheet normalization, intensity normalization, rotation,
//!   synthetic classes and image/manifest files.
//! - [`codes`]: log-Gabor and ordinal IrisCode baselines with shifted
//!   Hamming matching.
//! - [`model`]: the network, k-means initialization of the VLAD layer and
//!   checkpoints.
//! - [`train`]: SGD with momentum, plateau schedule, pretraining and full
//!   training.
//! - [`eval`]: verification pairs, ROC/EER/FRR@FAR and saliency maps.

pub mod codes;
pub mod digest;
mod error;
pub mod eval;
pub mod iris;
pub mod model;
pub mod train;

pub use error::{Error, Result};

/// Version string embedded in every produced artifact.
pub const TOOL_VERSION: &str = concat!("afinet ", env!("CARGO_PKG_VERSION"));
