//! Numerical core: parameter stores, a small MLP with manual gradients, Adam,
//! finite-difference checks and the checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Tensor};
pub use gradcheck::{grad_check, grad_check_with_floor, rel_err, GradCheckReport};
pub use mlp::{mlp_backward, mlp_forward, sigmoid, softplus, Activation, Mlp, MlpBatchCache, MlpCache, MlpSpec, OutputTransform};
pub use params::{ParamStore, Segment};
