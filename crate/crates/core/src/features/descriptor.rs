use super::FeatureMap;
use crate::error::{Error, Result};
use crate::raster::{luma, reflect_index as reflect, Image};

pub const BUILTIN_CHANNELS: usize = 16;
pub const MIN_DESCRIPTOR_SIDE: usize = 9;
const SCALES: [f64; 3] = [1.0, 2.0, 4.0];
const STD_RADIUS: isize = 2;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// One separable pass; sums offsets from the centre so a constant input is
/// reproduced exactly.
fn convolve_axis(plane: &[f64], w: usize, h: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let centre = plane[y * w + x];
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let o = k as isize - r;
                let v = if horizontal {
                    plane[y * w + reflect(x as isize + o, w)]
                } else {
                    plane[reflect(y as isize + o, h) * w + x]
                };
                acc += wk * (v - centre);
            }
            out[y * w + x] = centre + acc;
        }
    }
    out
}

/// Separable Gaussian blur truncated at 3 sigma with reflect padding.
pub fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let tmp = convolve_axis(plane, w, h, &k, true);
    convolve_axis(&tmp, w, h, &k, false)
}

fn gradient_magnitude(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (plane[y * w + reflect(xi + 1, w)] - plane[y * w + reflect(xi - 1, w)]);
            let gy = 0.5 * (plane[reflect(yi + 1, h) * w + x] - plane[reflect(yi - 1, h) * w + x]);
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

fn local_std(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let n = ((2 * STD_RADIUS + 1) * (2 * STD_RADIUS + 1)) as f64;
    let mut out = vec![0.0; plane.len()];
    let mut window = Vec::with_capacity(n as usize);
    for y in 0..h {
        for x in 0..w {
            let centre = plane[y * w + x];
            window.clear();
            for dy in -STD_RADIUS..=STD_RADIUS {
                for dx in -STD_RADIUS..=STD_RADIUS {
                    let v = plane[reflect(y as isize + dy, h) * w + reflect(x as isize + dx, w)];
                    window.push(v - centre);
                }
            }
            let mean = window.iter().sum::<f64>() / n;
            let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            out[y * w + x] = var.sqrt();
        }
    }
    out
}

/// Hand-crafted 16-channel descriptor: Gaussian-blurred RGB at sigma 1, 2, 4
/// (9), luminance gradient magnitude at the same scales (3), 5x5 RGB standard
/// deviation (3) and raw luminance (1).
pub fn builtin_descriptor(image: &Image) -> Result<FeatureMap> {
    let (w, h) = (image.width, image.height);
    if w < MIN_DESCRIPTOR_SIDE || h < MIN_DESCRIPTOR_SIDE {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} too small for the descriptor, need at least {MIN_DESCRIPTOR_SIDE}x{MIN_DESCRIPTOR_SIDE}"
        )));
    }
    let planes: Vec<Vec<f64>> = (0..3).map(|c| image.data.iter().skip(c).step_by(3).copied().collect()).collect();
    let lum: Vec<f64> = (0..w * h).map(|i| luma(planes[0][i], planes[1][i], planes[2][i])).collect();

    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(BUILTIN_CHANNELS);
    for &s in &SCALES {
        for p in &planes {
            channels.push(gaussian_blur(p, w, h, s));
        }
    }
    for &s in &SCALES {
        channels.push(gradient_magnitude(&gaussian_blur(&lum, w, h, s), w, h));
    }
    for p in &planes {
        channels.push(local_std(p, w, h));
    }
    channels.push(lum);

    let mut data = Vec::with_capacity(w * h * BUILTIN_CHANNELS);
    for i in 0..w * h {
        data.extend(channels.iter().map(|c| c[i] as f32));
    }
    FeatureMap::new(h, w, BUILTIN_CHANNELS, data)
}
