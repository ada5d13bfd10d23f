//! Windowed SSIM decomposition into luminance, contrast and structure maps,
//! with gradients with respect to the predicted image.
//!
//! Images are flat interleaved RGB. Window statistics use a uniform square
//! window with reflect padding, and the three maps are averaged over channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::reflect_index;

pub const LOSS_WINDOW: usize = 5;
pub const METRIC_WINDOW: usize = 11;
/// Below this standard deviation the contrast and structure terms are treated
/// as locally flat in the backward pass.
const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl SsimConstants {
    /// `C1 = (k1 R)^2`, `C2 = (k2 R)^2`, `C3 = C2 / 2`.
    pub fn from_k(k1: f64, k2: f64, range: f64) -> Self {
        let c2 = (k2 * range).powi(2);
        Self {
            c1: (k1 * range).powi(2),
            c2,
            c3: c2 / 2.0,
        }
    }
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self::from_k(0.01, 0.03, 1.0)
    }
}

/// Which per-ray error feeds the uncertainty loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// `(1 - L)(1 - C)(1 - S)`.
    Modified,
    /// `1 - L C S`.
    Conventional,
    /// Squared colour error, no SSIM.
    L2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WindowStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub cov: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimMaps {
    pub width: usize,
    pub height: usize,
    pub window: usize,
    pub constants: SsimConstants,
    pub l: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    /// Per pixel, per channel.
    pub stats: Vec<[WindowStats; 3]>,
}

fn check_inputs(x: &[f64], y: &[f64], width: usize, height: usize, window: usize) -> Result<()> {
    if x.len() != width * height * 3 || y.len() != x.len() {
        return Err(Error::Dimension(format!(
            "SSIM inputs of {} and {} values for {width}x{height} RGB",
            x.len(),
            y.len()
        )));
    }
    if window.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("SSIM window {window} must be odd")));
    }
    if window > width.min(height) {
        return Err(Error::InvalidInput(format!(
            "SSIM window {window} larger than {width}x{height} patch"
        )));
    }
    Ok(())
}

/// Flat indices of the window around `(px, py)`, padding by reflection.
fn window_indices(px: usize, py: usize, width: usize, height: usize, r: isize, out: &mut Vec<usize>) {
    out.clear();
    for dy in -r..=r {
        let yy = reflect_index(py as isize + dy, height);
        for dx in -r..=r {
            out.push(yy * width + reflect_index(px as isize + dx, width));
        }
    }
}

/// `x` is the observed image, `y` the prediction.
pub fn ssim_components(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    window: usize,
    constants: SsimConstants,
) -> Result<SsimMaps> {
    check_inputs(x, y, width, height, window)?;
    let SsimConstants { c1, c2, c3 } = constants;
    let r = (window / 2) as isize;
    let n = (window * window) as f64;
    let npx = width * height;
    let (mut l, mut c, mut s) = (vec![0.0; npx], vec![0.0; npx], vec![0.0; npx]);
    let mut stats = vec![[WindowStats::default(); 3]; npx];
    let mut idx = Vec::with_capacity(window * window);
    for py in 0..height {
        for px in 0..width {
            let p = py * width + px;
            window_indices(px, py, width, height, r, &mut idx);
            let (mut ls, mut cs, mut ss) = (0.0, 0.0, 0.0);
            for k in 0..3 {
                let mu_x = idx.iter().map(|&q| x[3 * q + k]).sum::<f64>() / n;
                let mu_y = idx.iter().map(|&q| y[3 * q + k]).sum::<f64>() / n;
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for &q in &idx {
                    let (a, b) = (x[3 * q + k] - mu_x, y[3 * q + k] - mu_y);
                    vx += a * a;
                    vy += b * b;
                    cov += a * b;
                }
                let (vx, vy, cov) = (vx / n, vy / n, cov / n);
                let (sx, sy) = (vx.sqrt(), vy.sqrt());
                ls += (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
                cs += (2.0 * sx * sy + c2) / (vx + vy + c2);
                ss += (cov + c3) / (sx * sy + c3);
                stats[p][k] = WindowStats {
                    mu_x,
                    mu_y,
                    sigma_x: sx,
                    sigma_y: sy,
                    cov,
                };
            }
            l[p] = ls / 3.0;
            c[p] = cs / 3.0;
            s[p] = ss / 3.0;
        }
    }
    Ok(SsimMaps {
        width,
        height,
        window,
        constants,
        l,
        c,
        s,
        stats,
    })
}

/// Gradient with respect to the prediction `y` of `sum_p gl[p] L[p] + gc[p] C[p] + gs[p] S[p]`.
pub fn ssim_components_backward(x: &[f64], y: &[f64], maps: &SsimMaps, gl: &[f64], gc: &[f64], gs: &[f64]) -> Vec<f64> {
    let (width, height) = (maps.width, maps.height);
    let SsimConstants { c1, c2, c3 } = maps.constants;
    let r = (maps.window / 2) as isize;
    let n = (maps.window * maps.window) as f64;
    let mut dy = vec![0.0; y.len()];
    let mut idx = Vec::with_capacity(maps.window * maps.window);
    for py in 0..height {
        for px in 0..width {
            let p = py * width + px;
            if gl[p] == 0.0 && gc[p] == 0.0 && gs[p] == 0.0 {
                continue;
            }
            window_indices(px, py, width, height, r, &mut idx);
            for k in 0..3 {
                let WindowStats {
                    mu_x,
                    mu_y,
                    sigma_x: sx,
                    sigma_y: sy,
                    cov,
                } = maps.stats[p][k];
                let (gl, gc, gs) = (gl[p] / 3.0, gc[p] / 3.0, gs[p] / 3.0);

                let ln = 2.0 * mu_x * mu_y + c1;
                let ld = mu_x * mu_x + mu_y * mu_y + c1;
                let g_mu = gl * (2.0 * mu_x * ld - ln * 2.0 * mu_y) / (ld * ld);

                let cd = sx * sx + sy * sy + c2;
                let dc_dsy = (2.0 * sx * cd - (2.0 * sx * sy + c2) * 2.0 * sy) / (cd * cd);
                let sd = sx * sy + c3;
                let ds_dsy = -(cov + c3) * sx / (sd * sd);
                let g_sy = gc * dc_dsy + gs * ds_dsy;
                let g_var = if sy > SIGMA_FLOOR { g_sy / (2.0 * sy) } else { 0.0 };
                let g_cov = gs / sd;

                for &q in &idx {
                    let yq = y[3 * q + k] - mu_y;
                    let xq = x[3 * q + k] - mu_x;
                    dy[3 * q + k] += (g_mu + 2.0 * g_var * yq + g_cov * xq) / n;
                }
            }
        }
    }
    dy
}

#[inline]
pub fn modified_error(l: f64, c: f64, s: f64) -> f64 {
    (1.0 - l) * (1.0 - c) * (1.0 - s)
}

#[inline]
pub fn conventional_error(l: f64, c: f64, s: f64) -> f64 {
    1.0 - l * c * s
}

/// Per-pixel error map; `mode` must be one of the SSIM forms.
pub fn ssim_error_map(maps: &SsimMaps, mode: SsimMode) -> Result<Vec<f64>> {
    let f = match mode {
        SsimMode::Modified => modified_error,
        SsimMode::Conventional => conventional_error,
        SsimMode::L2 => return Err(Error::InvalidInput("l2 mode has no SSIM error map".into())),
    };
    Ok((0..maps.l.len()).map(|p| f(maps.l[p], maps.c[p], maps.s[p])).collect())
}

/// Per-ray errors of one patch together with the maps needed for backward.
#[derive(Clone, Debug)]
pub struct PatchError {
    pub errors: Vec<f64>,
    pub maps: Option<SsimMaps>,
}

/// Error per pixel of a `width x height` patch under `mode`.
pub fn patch_error(
    mode: SsimMode,
    observed: &[f64],
    predicted: &[f64],
    width: usize,
    height: usize,
    window: usize,
    constants: SsimConstants,
) -> Result<PatchError> {
    match mode {
        SsimMode::L2 => {
            if observed.len() != predicted.len() || observed.len() != width * height * 3 {
                return Err(Error::Dimension("l2 patch error inputs differ in size".into()));
            }
            let errors = observed
                .chunks_exact(3)
                .zip(predicted.chunks_exact(3))
                .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum())
                .collect();
            Ok(PatchError { errors, maps: None })
        }
        _ => {
            let maps = ssim_components(observed, predicted, width, height, window, constants)?;
            let errors = ssim_error_map(&maps, mode)?;
            Ok(PatchError { errors, maps: Some(maps) })
        }
    }
}

/// Gradient of `sum_p derr[p] * err[p]` with respect to the prediction.
pub fn patch_error_backward(mode: SsimMode, observed: &[f64], predicted: &[f64], pe: &PatchError, derr: &[f64]) -> Vec<f64> {
    match (mode, &pe.maps) {
        (SsimMode::L2, _) | (_, None) => {
            let mut out = vec![0.0; predicted.len()];
            for (i, o) in out.iter_mut().enumerate() {
                *o = derr[i / 3] * 2.0 * (predicted[i] - observed[i]);
            }
            out
        }
        (mode, Some(maps)) => {
            let np = maps.l.len();
            let (mut gl, mut gc, mut gs) = (vec![0.0; np], vec![0.0; np], vec![0.0; np]);
            for p in 0..np {
                let (l, c, s) = (maps.l[p], maps.c[p], maps.s[p]);
                match mode {
                    SsimMode::Modified => {
                        gl[p] = -derr[p] * (1.0 - c) * (1.0 - s);
                        gc[p] = -derr[p] * (1.0 - l) * (1.0 - s);
                        gs[p] = -derr[p] * (1.0 - l) * (1.0 - c);
                    }
                    _ => {
                        gl[p] = -derr[p] * c * s;
                        gc[p] = -derr[p] * l * s;
                        gs[p] = -derr[p] * l * c;
                    }
                }
            }
            ssim_components_backward(observed, predicted, maps, &gl, &gc, &gs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::rel_err;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pads one channel plane by explicit mirroring, then reads windows from
    /// the padded copy.
    fn padded(plane: &[f64], w: usize, h: usize, r: usize) -> (Vec<f64>, usize) {
        let pw = w + 2 * r;
        let ph = h + 2 * r;
        let mirror = |i: i64, n: i64| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            i as usize
        };
        let mut out = vec![0.0; pw * ph];
        for yy in 0..ph {
            for xx in 0..pw {
                let sx = mirror(xx as i64 - r as i64, w as i64);
                let sy = mirror(yy as i64 - r as i64, h as i64);
                out[yy * pw + xx] = plane[sy * w + sx];
            }
        }
        (out, pw)
    }

    fn naive_maps(x: &[f64], y: &[f64], w: usize, h: usize, win: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = SsimConstants::default();
        let r = win / 2;
        let (mut lm, mut cm, mut sm) = (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]);
        for ch in 0..3 {
            let xp: Vec<f64> = (0..w * h).map(|i| x[3 * i + ch]).collect();
            let yp: Vec<f64> = (0..w * h).map(|i| y[3 * i + ch]).collect();
            let (xpad, pw) = padded(&xp, w, h, r);
            let (ypad, _) = padded(&yp, w, h, r);
            for py in 0..h {
                for px in 0..w {
                    let mut a = Vec::new();
                    let mut b = Vec::new();
                    for i in 0..win {
                        for j in 0..win {
                            a.push(xpad[(py + i) * pw + px + j]);
                            b.push(ypad[(py + i) * pw + px + j]);
                        }
                    }
                    let n = a.len() as f64;
                    let ma = a.iter().sum::<f64>() / n;
                    let mb = b.iter().sum::<f64>() / n;
                    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                    let cv = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / n;
                    let l = (2.0 * ma * mb + k.c1) / (ma * ma + mb * mb + k.c1);
                    let c = (2.0 * va.sqrt() * vb.sqrt() + k.c2) / (va + vb + k.c2);
                    let s = (cv + k.c3) / (va.sqrt() * vb.sqrt() + k.c3);
                    lm[py * w + px] += l / 3.0;
                    cm[py * w + px] += c / 3.0;
                    sm[py * w + px] += s / 3.0;
                }
            }
        }
        (lm, cm, sm)
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n * 3).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn identical_patches_give_unit_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 64);
        let m = ssim_components(&x, &x, 8, 8, 5, SsimConstants::default()).unwrap();
        for p in 0..64 {
            assert!((m.l[p] - 1.0).abs() < 1e-14 && (m.c[p] - 1.0).abs() < 1e-14 && (m.s[p] - 1.0).abs() < 1e-14);
            assert!(conventional_error(m.l[p], m.c[p], m.s[p]).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_patches_collapse_variance_terms() {
        let k = SsimConstants::default();
        let x = vec![0.2; 6 * 6 * 3];
        let y = vec![0.8; 6 * 6 * 3];
        let m = ssim_components(&x, &y, 6, 6, 5, k).unwrap();
        let expect = (2.0 * 0.2 * 0.8 + k.c1) / (0.04 + 0.64 + k.c1);
        for p in 0..36 {
            assert_eq!(m.c[p], 1.0);
            assert_eq!(m.s[p], 1.0);
            assert!((m.l[p] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn error_forms() {
        assert_eq!(modified_error(1.0, 1.0, 1.0), 0.0);
        assert!((modified_error(0.3, 0.3, 0.3) - 0.343).abs() < 1e-15);
        let modified_ratio = modified_error(0.3, 0.3, 0.3) / modified_error(0.7, 0.7, 0.7);
        let conventional_ratio = conventional_error(0.3, 0.3, 0.3) / conventional_error(0.7, 0.7, 0.7);
        assert!((modified_ratio - 12.7037).abs() < 1e-4);
        assert!((conventional_ratio - 1.4810).abs() < 1e-4);
        assert!(modified_ratio > conventional_ratio);
    }

    #[test]
    fn window_validation() {
        let x = vec![0.5; 4 * 4 * 3];
        assert!(ssim_components(&x, &x, 4, 4, 5, SsimConstants::default()).is_err());
        assert!(ssim_components(&x, &x, 4, 4, 4, SsimConstants::default()).is_err());
        assert!(ssim_components(&x, &x[3..], 4, 4, 3, SsimConstants::default()).is_err());
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (win, w, h) in [(5, 12, 9), (11, 16, 13)] {
            for _ in 0..20 {
                let x = random_image(&mut rng, w * h);
                let y = random_image(&mut rng, w * h);
                let m = ssim_components(&x, &y, w, h, win, SsimConstants::default()).unwrap();
                let (l, c, s) = naive_maps(&x, &y, w, h, win);
                for p in 0..w * h {
                    assert!((m.l[p] - l[p]).abs() < 1e-9);
                    assert!((m.c[p] - c[p]).abs() < 1e-9);
                    assert!((m.s[p] - s[p]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn maps_within_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_image(&mut rng, 100);
            let y = random_image(&mut rng, 100);
            let m = ssim_components(&x, &y, 10, 10, 5, SsimConstants::default()).unwrap();
            for p in 0..100 {
                assert!(m.l[p] > 0.0 && m.l[p] <= 1.0);
                assert!(m.c[p] > 0.0 && m.c[p] <= 1.0);
                assert!((-1.0..=1.0).contains(&m.s[p]));
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (7, 6);
        for mode in [SsimMode::Modified, SsimMode::Conventional, SsimMode::L2] {
            for _ in 0..20 {
                let x = random_image(&mut rng, w * h);
                let y = random_image(&mut rng, w * h);
                let up: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let f = |y: &[f64]| {
                    let pe = patch_error(mode, &x, y, w, h, 5, SsimConstants::default()).unwrap();
                    pe.errors.iter().zip(&up).map(|(e, u)| e * u).sum::<f64>()
                };
                let pe = patch_error(mode, &x, &y, w, h, 5, SsimConstants::default()).unwrap();
                let g = patch_error_backward(mode, &x, &y, &pe, &up);
                let hstep = 1e-5;
                for i in 0..y.len() {
                    let mut yp = y.clone();
                    yp[i] += hstep;
                    let mut ym = y.clone();
                    ym[i] -= hstep;
                    let num = (f(&yp) - f(&ym)) / (2.0 * hstep);
                    let e = rel_err(g[i], num, 1e-4);
                    assert!(e < 1e-6, "{mode:?} index {i}: {} vs {num} ({e})", g[i]);
                }
            }
        }
    }
}
