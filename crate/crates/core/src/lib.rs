//! Distractor-robust scene fitting with learned per-ray uncertainty.
//!
//! The crate fits a trainable field (a 2D image grid or a 3D voxel grid) to
//! multi-view images that contain transient distractors. A small MLP predicts
//! a per-ray uncertainty from image features; it is trained on an SSIM-based
//! objective while the field is trained on an uncertainty-weighted colour
//! loss, with the two gradient paths kept separate.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod features;
pub mod fieldrender;
pub mod numkit;
pub mod raster;
pub mod robustloss;
pub mod sampling;
pub mod scenegen;
pub mod trainer;

pub use error::{Error, Result};
