//! Trainable fields and the differentiable rendering path.

pub mod camera;
pub mod composite;
pub mod field;
pub mod render;

pub use camera::{Camera, Ray, IDENTITY_POSE};
pub use composite::{composite, composite_backward, CompositeCache, RaySampleSet};
pub use field::{ImageField2D, Interp2, Interp3, VoxelField3D, VoxelSample};
pub use render::{draw_jitter, render_pixels, Field, PixelCache, RenderSettings, RenderTape};
