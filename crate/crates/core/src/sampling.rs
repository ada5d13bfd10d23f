//! Ray batch construction: dilated patches, contiguous patches and uniform
//! random pixels.
//!
//! Every batch is drawn from a ChaCha8 stream keyed by `(seed, call_index)`,
//! so any batch can be regenerated without replaying earlier ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    DilatedPatch,
    ContiguousPatch,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    pub patch_size: usize,
    pub dilation: usize,
    /// Rays per batch; patches per batch is `ceil(batch_rays / patch_size^2)`.
    pub batch_rays: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::DilatedPatch,
            patch_size: 32,
            dilation: 4,
            batch_rays: 4096,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Dilation actually applied; contiguous patches always use 1.
    pub fn effective_dilation(&self) -> usize {
        match self.strategy {
            SamplingStrategy::ContiguousPatch => 1,
            _ => self.dilation,
        }
    }

    pub fn footprint(&self) -> usize {
        footprint(self.patch_size, self.effective_dilation())
    }

    pub fn patches_per_batch(&self) -> usize {
        let p2 = self.patch_size * self.patch_size;
        self.batch_rays.div_ceil(p2.max(1))
    }

    /// Checks the config against the smallest view it will sample from.
    pub fn validate(&self, min_width: usize, min_height: usize) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::Config(format!("patch_size {} must be at least 2", self.patch_size)));
        }
        if self.dilation < 1 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        if self.batch_rays == 0 {
            return Err(Error::Config("batch_rays must be positive".into()));
        }
        let fp = self.footprint();
        if self.strategy != SamplingStrategy::Random && fp > min_width.min(min_height) {
            return Err(Error::Config(format!(
                "patch footprint {fp} (patch_size {}, dilation {}) exceeds the smallest view {min_width}x{min_height}",
                self.patch_size,
                self.effective_dilation()
            )));
        }
        if self.strategy == SamplingStrategy::Random && self.patch_size * self.patch_size > min_width * min_height {
            return Err(Error::Config("random pseudo-patch larger than the view".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn footprint(patch_size: usize, dilation: usize) -> usize {
    (patch_size - 1) * dilation + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchLayout {
    /// `coords[i * P + j] = (x0 + j d, y0 + i d)`.
    Grid { anchor: (usize, usize), dilation: usize },
    /// Independent uniform pixels, arranged as a `P x P` pseudo-patch.
    Scattered,
}

/// One group of `P^2` pixels from a single view, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub view_id: usize,
    pub patch_size: usize,
    pub layout: PatchLayout,
    pub coords: Vec<(usize, usize)>,
}

impl PatchSample {
    pub fn grid(view_id: usize, anchor: (usize, usize), patch_size: usize, dilation: usize) -> Self {
        let mut coords = Vec::with_capacity(patch_size * patch_size);
        for i in 0..patch_size {
            for j in 0..patch_size {
                coords.push((anchor.0 + j * dilation, anchor.1 + i * dilation));
            }
        }
        Self {
            view_id,
            patch_size,
            layout: PatchLayout::Grid { anchor, dilation },
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn stream_rng(seed: u64, call_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(call_index);
    rng
}

/// Draws one batch. `view_sizes[v]` is `(width, height)` of view `v`.
pub fn sample_batch(cfg: &SamplerConfig, view_sizes: &[(usize, usize)], call_index: u64) -> Result<Vec<PatchSample>> {
    if view_sizes.is_empty() {
        return Err(Error::InvalidInput("no views to sample from".into()));
    }
    let min_w = view_sizes.iter().map(|v| v.0).min().unwrap_or(0);
    let min_h = view_sizes.iter().map(|v| v.1).min().unwrap_or(0);
    cfg.validate(min_w, min_h)?;
    let mut rng = stream_rng(cfg.seed, call_index);
    let p = cfg.patch_size;
    let d = cfg.effective_dilation();
    let fp = cfg.footprint();
    let mut out = Vec::with_capacity(cfg.patches_per_batch());
    for _ in 0..cfg.patches_per_batch() {
        let view_id = rng.gen_range(0..view_sizes.len());
        let (w, h) = view_sizes[view_id];
        match cfg.strategy {
            SamplingStrategy::Random => {
                let coords = (0..p * p).map(|_| (rng.gen_range(0..w), rng.gen_range(0..h))).collect();
                out.push(PatchSample {
                    view_id,
                    patch_size: p,
                    layout: PatchLayout::Scattered,
                    coords,
                });
            }
            _ => {
                let x0 = rng.gen_range(0..=w - fp);
                let y0 = rng.gen_range(0..=h - fp);
                out.push(PatchSample::grid(view_id, (x0, y0), p, d));
            }
        }
    }
    Ok(out)
}

/// Batch source bound to one config and view set, counting its calls.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub config: SamplerConfig,
    pub view_sizes: Vec<(usize, usize)>,
    pub calls: u64,
}

impl Sampler {
    pub fn new(config: SamplerConfig, view_sizes: Vec<(usize, usize)>) -> Result<Self> {
        let min_w = view_sizes.iter().map(|v| v.0).min().unwrap_or(0);
        let min_h = view_sizes.iter().map(|v| v.1).min().unwrap_or(0);
        config.validate(min_w, min_h)?;
        Ok(Self {
            config,
            view_sizes,
            calls: 0,
        })
    }

    pub fn next_batch(&mut self) -> Result<Vec<PatchSample>> {
        let b = sample_batch(&self.config, &self.view_sizes, self.calls)?;
        self.calls += 1;
        Ok(b)
    }
}

/// Colours and feature vectors at the patch coordinates, in coordinate order.
pub fn gather_patch(image: &Image, features: &FeatureMap, patch: &PatchSample) -> (Vec<[f64; 3]>, Vec<f32>) {
    let colors = patch.coords.iter().map(|&(x, y)| image.get(x, y)).collect();
    let mut feats = Vec::with_capacity(patch.len() * features.channels);
    for &(x, y) in &patch.coords {
        feats.extend_from_slice(features.get(x, y));
    }
    (colors, feats)
}
