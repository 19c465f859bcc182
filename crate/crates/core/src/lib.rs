//! Encoder-decoder segmentation engine for single-channel slices.
//!
//! Everything runs on the CPU with hand-written forward and backward passes
//! over [`tensor::Tensor4`] values in NCHW layout.

pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
