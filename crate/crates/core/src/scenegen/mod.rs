//! Synthetic multi-view datasets with injected distractors, their on-disk
//! layout and image quality metrics.

mod distractors;
mod generate;
mod manifest;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureProviderKind};
use crate::fieldrender::Camera;
use crate::raster::Image;

pub use generate::{gen_scene, ground_truth_flat, VOXEL_BOUNDS};
pub use manifest::{load_dataset, save_dataset, MANIFEST_FILE, MANIFEST_VERSION};
pub use metrics::{psnr, ssim_metric, PSNR_CAP_DB};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    Flat2d,
    Voxel3d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    Disk,
    Box,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub mode: SceneMode,
    pub seed: u64,
    /// Training views.
    pub n_views: usize,
    /// Held-out clean views.
    pub n_test: usize,
    pub width: usize,
    pub height: usize,
    /// Target mean fraction of distractor pixels per training view.
    pub occlusion_ratio: f64,
    /// Distractor radius range in pixels.
    pub distractor_radius: [f64; 2],
    pub distractor_kinds: Vec<DistractorKind>,
    /// Amplitude of the per-pixel noise texture on distractors.
    pub distractor_texture: f64,
    /// Minimum per-channel difference between a distractor's base colour and
    /// the mean scene colour under it.
    pub distractor_contrast: f64,
    /// Factor applied to the clean scene colours; below 1 gives a dark scene.
    pub exposure: f64,
    /// Match distractor luma to the scene under it instead.
    pub camouflage: bool,
    /// Length of the luma-free colour offset of camouflaged distractors.
    pub camouflage_shift: f64,
    /// Probability that a distractor reappears, shifted, in the next view.
    pub recurring_fraction: f64,
    pub feature_provider: FeatureProviderKind,
    /// Ground-truth voxel grid resolution per axis (voxel mode).
    pub gt_grid: usize,
    /// Samples per ray for ground-truth renders (voxel mode).
    pub gt_samples: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            mode: SceneMode::Flat2d,
            seed: 0,
            n_views: 24,
            n_test: 4,
            width: 64,
            height: 64,
            occlusion_ratio: 0.2,
            distractor_radius: [10.0, 18.0],
            distractor_kinds: vec![DistractorKind::Disk, DistractorKind::Box, DistractorKind::Blob],
            distractor_texture: 0.45,
            distractor_contrast: 0.45,
            exposure: 1.0,
            camouflage: false,
            camouflage_shift: 0.12,
            recurring_fraction: 0.0,
            feature_provider: FeatureProviderKind::BuiltinDescriptor,
            gt_grid: 48,
            gt_samples: 96,
        }
    }
}

impl SceneConfig {
    /// Dark scene with luma-matched, weakly textured distractors: colours
    /// close in absolute terms, far apart relative to the scene brightness.
    pub fn camouflage_benchmark() -> Self {
        Self {
            exposure: 0.1,
            camouflage: true,
            camouflage_shift: 0.1,
            distractor_texture: 0.08,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.n_views == 0 {
            return bad("n_views must be at least 1".into());
        }
        if self.width < crate::features::MIN_DESCRIPTOR_SIDE || self.height < crate::features::MIN_DESCRIPTOR_SIDE {
            return bad(format!("resolution {}x{} below the 9x9 minimum", self.width, self.height));
        }
        if !(0.0..=0.5).contains(&self.occlusion_ratio) {
            return bad(format!("occlusion_ratio {} outside [0, 0.5]", self.occlusion_ratio));
        }
        let [r0, r1] = self.distractor_radius;
        if !(r0 >= 1.0 && r1 >= r0 && r1.is_finite()) {
            return bad(format!("distractor_radius [{r0}, {r1}] must satisfy 1 <= min <= max"));
        }
        if self.distractor_kinds.is_empty() && self.occlusion_ratio > 0.0 {
            return bad("distractor_kinds is empty".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_texture) || !(0.0..=0.45).contains(&self.distractor_contrast) {
            return bad("distractor_texture must lie in [0, 1] and distractor_contrast in [0, 0.45]".into());
        }
        if !(self.exposure > 0.0 && self.exposure <= 1.0) {
            return bad(format!("exposure {} outside (0, 1]", self.exposure));
        }
        if !(0.0..=0.5).contains(&self.camouflage_shift) {
            return bad(format!("camouflage_shift {} outside [0, 0.5]", self.camouflage_shift));
        }
        if !(0.0..=1.0).contains(&self.recurring_fraction) {
            return bad(format!("recurring_fraction {} outside [0, 1]", self.recurring_fraction));
        }
        if self.mode == SceneMode::Voxel3d && (self.gt_grid < 2 || self.gt_samples == 0) {
            return bad("gt_grid must be >= 2 and gt_samples >= 1".into());
        }
        Ok(())
    }
}

/// A posed training image with its features and, for evaluation only, the
/// distractor mask.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: Image,
    pub camera: Camera,
    pub features: FeatureMap,
    pub mask: Vec<bool>,
}

impl View {
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestView {
    pub image: Image,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub train: Vec<View>,
    pub test: Vec<TestView>,
}

impl Dataset {
    pub fn view_sizes(&self) -> Vec<(usize, usize)> {
        self.train.iter().map(|v| (v.image.width, v.image.height)).collect()
    }

    pub fn feature_channels(&self) -> usize {
        self.train.first().map_or(0, |v| v.features.channels)
    }

    pub fn mean_coverage(&self) -> f64 {
        self.train.iter().map(View::coverage).sum::<f64>() / self.train.len().max(1) as f64
    }

    pub fn has_distractors(&self) -> bool {
        self.train.iter().any(|v| v.mask.iter().any(|&m| m))
    }

    /// Checks shapes and feature validity across views.
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        let c = self.feature_channels();
        for (i, v) in self.train.iter().enumerate() {
            let (w, h) = (v.image.width, v.image.height);
            if v.features.width != w || v.features.height != h || v.features.channels != c {
                return Err(Error::Dimension(format!(
                    "view {i}: features {}x{}x{} do not match image {w}x{h} with {c} channels",
                    v.features.width, v.features.height, v.features.channels
                )));
            }
            if v.mask.len() != w * h {
                return Err(Error::Dimension(format!("view {i}: mask has {} entries", v.mask.len())));
            }
            if v.camera.width != w || v.camera.height != h {
                return Err(Error::Dimension(format!("view {i}: camera size differs from image")));
            }
            v.features.validate().map_err(|e| Error::InvalidInput(format!("view {i}: {e}")))?;
        }
        Ok(())
    }
}
