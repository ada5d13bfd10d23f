//! Minimal raster charts, no text.

use std::path::Path;

use super::report::RunReport;
use crate::error::{Error, Result};
use crate::raster::{to_u8, write_gray8, Image};

const WIDTH: usize = 640;
const PANEL: usize = 200;
const MARGIN: usize = 20;
const AXIS: [f64; 3] = [0.6, 0.6, 0.6];
const PSNR_COLOR: [f64; 3] = [0.1, 0.3, 0.9];
const DISTRACTOR_COLOR: [f64; 3] = [0.9, 0.2, 0.1];
const STATIC_COLOR: [f64; 3] = [0.1, 0.6, 0.2];

fn draw_line(img: &mut Image, a: (f64, f64), b: (f64, f64), color: [f64; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width && (y as usize) < img.height {
            img.set(x as usize, y as usize, color);
        }
    }
}

/// Draws `series` (sharing one y range) into the panel starting at row `top`.
fn panel(img: &mut Image, top: usize, iters: &[f64], series: &[(&[f64], [f64; 3])]) {
    let (x0, x1) = (MARGIN as f64, (WIDTH - MARGIN) as f64);
    let (y0, y1) = ((top + PANEL) as f64, top as f64);
    draw_line(img, (x0, y0), (x1, y0), AXIS);
    draw_line(img, (x0, y0), (x0, y1), AXIS);
    let finite = series.iter().flat_map(|s| s.0.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() || iters.is_empty() {
        return;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let imax = iters.last().copied().unwrap_or(1.0).max(1.0);
    let map = |i: f64, v: f64| (x0 + (x1 - x0) * i / imax, y0 + (y1 - y0) * (v - lo) / span);
    for &(vals, color) in series {
        for k in 1..vals.len().min(iters.len()) {
            if vals[k - 1].is_finite() && vals[k].is_finite() {
                draw_line(img, map(iters[k - 1], vals[k - 1]), map(iters[k], vals[k]), color);
            }
        }
    }
}

/// Two stacked panels: test PSNR against iteration (blue), and mean beta on
/// distractor (red) and static (green) pixels against iteration.
pub fn save_convergence_plot(report: &RunReport, path: &Path) -> Result<()> {
    let height = 2 * PANEL + 3 * MARGIN;
    let mut img = Image::filled(WIDTH, height, [1.0; 3]);
    let iters: Vec<f64> = report.rows.iter().map(|r| r.iter as f64).collect();
    let psnr: Vec<f64> = report.rows.iter().map(|r| r.test_psnr).collect();
    let bd: Vec<f64> = report.rows.iter().map(|r| r.beta_distractor).collect();
    let bs: Vec<f64> = report.rows.iter().map(|r| r.beta_static).collect();
    panel(&mut img, MARGIN, &iters, &[(&psnr, PSNR_COLOR)]);
    panel(&mut img, 2 * MARGIN + PANEL, &iters, &[(&bd, DISTRACTOR_COLOR), (&bs, STATIC_COLOR)]);
    img.save(path)
}

/// Grayscale map of `beta`, white at `range[1]` and above.
pub fn save_beta_heatmap(path: &Path, width: usize, height: usize, beta: &[f64], range: [f64; 2]) -> Result<()> {
    if beta.len() != width * height {
        return Err(Error::Dimension(format!("{} beta values for {width}x{height}", beta.len())));
    }
    let [lo, hi] = range;
    let bytes: Vec<u8> = beta.iter().map(|&b| to_u8((b - lo) / (hi - lo))).collect();
    write_gray8(path, width, height, &bytes)
}
