//! Per-pixel feature maps: providers, the FMAP file format, resampling and
//! cosine similarity.

mod descriptor;
mod io;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use descriptor::{builtin_descriptor, gaussian_blur, BUILTIN_CHANNELS, MIN_DESCRIPTOR_SIDE};
pub use io::{decode_fmap, encode_fmap, load_fmap, save_fmap, FMAP_MAGIC, FMAP_VERSION};
pub use oracle::{oracle_features, ORACLE_CHANNELS, ORACLE_NOISE_STD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureProviderKind {
    BuiltinDescriptor,
    Oracle,
    File,
}

/// `height x width x channels` single-precision map, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimension(format!("zero dims {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width}x{channels} feature map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Checks that every vector is finite and nonzero, naming the first bad pixel.
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.data.chunks_exact(self.channels).enumerate() {
            let (x, y) = (i % self.width, i / self.width);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite feature at pixel ({x}, {y})")));
            }
            if f.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidInput(format!("zero feature vector at pixel ({x}, {y})")));
            }
        }
        Ok(())
    }

    /// Copy with every pixel vector scaled to unit length.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for f in out.data.chunks_exact_mut(self.channels) {
            let n = f.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if n > 0.0 {
                f.iter_mut().for_each(|v| *v = (f64::from(*v) / n) as f32);
            }
        }
        out
    }
}

/// Copies of `maps` with each channel shifted and scaled to zero mean and unit
/// variance over every pixel of every map. Constant channels are only centred.
pub fn standardized(maps: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    let Some(first) = maps.first() else {
        return Ok(Vec::new());
    };
    let c = first.channels;
    if let Some(m) = maps.iter().find(|m| m.channels != c) {
        return Err(Error::Dimension(format!("feature maps with {c} and {} channels", m.channels)));
    }
    let (mut sum, mut sq, mut n) = (vec![0.0f64; c], vec![0.0f64; c], 0usize);
    for m in maps {
        for f in m.data.chunks_exact(c) {
            for (k, &v) in f.iter().enumerate() {
                sum[k] += f64::from(v);
                sq[k] += f64::from(v) * f64::from(v);
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let scale: Vec<f64> = (0..c)
        .map(|k| {
            let var = (sq[k] / n as f64 - mean[k] * mean[k]).max(0.0);
            if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 }
        })
        .collect();
    Ok(maps
        .iter()
        .map(|m| {
            let mut out = m.clone();
            for f in out.data.chunks_exact_mut(c) {
                for (k, v) in f.iter_mut().enumerate() {
                    *v = ((f64::from(*v) - mean[k]) * scale[k]) as f32;
                }
            }
            out
        })
        .collect())
}

/// Cosine similarity computed in double precision.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::InvalidInput("cosine of a zero vector".into()));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Source index of destination index `i` when mapping `src` samples onto `dst`.
#[inline]
pub fn nn_index(i: usize, src: usize, dst: usize) -> usize {
    ((2 * i + 1) * src / (2 * dst)).min(src - 1)
}

/// Nearest-neighbour resampling to any size.
pub fn nn_resample(fmap: &FeatureMap, height: usize, width: usize) -> Result<FeatureMap> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension("zero dims in resample target".into()));
    }
    let c = fmap.channels;
    let mut data = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let sy = nn_index(y, fmap.height, height);
        for x in 0..width {
            let sx = nn_index(x, fmap.width, width);
            data.extend_from_slice(fmap.get(sx, sy));
        }
    }
    FeatureMap::new(height, width, c, data)
}

/// Nearest-neighbour upsampling; rejects targets smaller than the source.
pub fn nn_upsample(fmap: &FeatureMap, height: usize, width: usize) -> Result<FeatureMap> {
    if height < fmap.height || width < fmap.width {
        return Err(Error::InvalidInput(format!(
            "cannot upsample {}x{} to smaller {height}x{width}",
            fmap.height, fmap.width
        )));
    }
    nn_resample(fmap, height, width)
}
