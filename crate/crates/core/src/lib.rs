//! Multi-crop test-time inference for image classifiers.
//!
//! The pipeline per image: decode, resize the shorter side, plan crops,
//! extract and normalize them, run a split model (features, then head), and
//! fuse the per-crop outputs into one prediction.

pub mod cropping;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod imaging;
pub mod model;

pub use error::{Error, Result};
