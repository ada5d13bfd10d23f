//! Image-space distractor shapes and their placement.

use rand::Rng;

use super::{DistractorKind, SceneConfig};
use crate::error::{Error, Result};
use crate::raster::Image;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// How far past the target occlusion a single view may go.
const OVERSHOOT: f64 = 0.03;
const MAX_ATTEMPTS: usize = 2000;
const MAX_SHIFT: f64 = 8.0;
const COLOR_LO: f64 = 0.02;
const COLOR_HI: f64 = 0.98;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Distractor {
    pub kind: DistractorKind,
    pub center: (f64, f64),
    pub radius: f64,
    /// Extra disks for blobs, as offsets and radii relative to `radius`.
    pub lobes: Vec<(f64, f64, f64)>,
    pub base: [f64; 3],
    pub texture_seed: u64,
    pub class_id: u16,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic value in `[-1, 1)` for a texel.
fn texel(seed: u64, x: i64, y: i64, channel: u64) -> f64 {
    let h = mix(seed ^ mix((x as u64) ^ mix((y as u64) ^ mix(channel))));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl Distractor {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5 - self.center.0, y as f64 + 0.5 - self.center.1);
        let r = self.radius;
        match self.kind {
            DistractorKind::Disk => px * px + py * py <= r * r,
            DistractorKind::Box => px.abs() <= r && py.abs() <= 0.7 * r,
            DistractorKind::Blob => {
                px * px + py * py <= r * r
                    || self.lobes.iter().any(|&(ox, oy, lr)| {
                        let (dx, dy) = (px - ox * r, py - oy * r);
                        dx * dx + dy * dy <= (lr * r) * (lr * r)
                    })
            }
        }
    }

    /// Texture is anchored to the shape so a shifted copy carries the same pattern.
    pub fn color_at(&self, x: usize, y: usize, amplitude: f64) -> [f64; 3] {
        let tx = x as i64 - self.center.0.floor() as i64;
        let ty = y as i64 - self.center.1.floor() as i64;
        let mut c = self.base;
        for (k, v) in c.iter_mut().enumerate() {
            *v = (*v + amplitude * texel(self.texture_seed, tx, ty, k as u64)).clamp(0.0, 1.0);
        }
        c
    }

    fn bbox(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let reach = self.radius * (1.0 + self.lobes.iter().map(|l| l.0.abs().max(l.1.abs()) + l.2).fold(0.0, f64::max)) + 1.0;
        let x0 = (self.center.0 - reach).floor().max(0.0) as usize;
        let y0 = (self.center.1 - reach).floor().max(0.0) as usize;
        let x1 = ((self.center.0 + reach).ceil().max(0.0) as usize).min(w);
        let y1 = ((self.center.1 + reach).ceil().max(0.0) as usize).min(h);
        (x0, y0, x1, y1)
    }

    pub fn pixels(&self, w: usize, h: usize) -> Vec<(usize, usize)> {
        let (x0, y0, x1, y1) = self.bbox(w, h);
        let mut out = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                if self.covers(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

fn random_shape<R: Rng>(rng: &mut R, cfg: &SceneConfig, w: usize, h: usize) -> Distractor {
    let kind = cfg.distractor_kinds[rng.gen_range(0..cfg.distractor_kinds.len())];
    let [r0, r1] = cfg.distractor_radius;
    let radius = if r1 > r0 { rng.gen_range(r0..=r1) } else { r0 };
    let lobes = if kind == DistractorKind::Blob {
        (0..rng.gen_range(2..=3))
            .map(|_| (rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.4..0.8)))
            .collect()
    } else {
        Vec::new()
    };
    Distractor {
        kind,
        center: (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)),
        radius,
        lobes,
        base: [0.0; 3],
        texture_seed: rng.gen(),
        class_id: 0,
    }
}

fn mean_under(gt: &Image, pixels: &[(usize, usize)]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for &(x, y) in pixels {
        let c = gt.get(x, y);
        (0..3).for_each(|k| m[k] += c[k]);
    }
    m.map(|v| v / pixels.len().max(1) as f64)
}

/// Base colour: luma-matched with a hue shift under camouflage, otherwise
/// every channel at least `distractor_contrast` away from the scene under it.
fn pick_base<R: Rng>(rng: &mut R, cfg: &SceneConfig, under: [f64; 3]) -> [f64; 3] {
    if cfg.camouflage {
        // Random direction orthogonal to the luma weights keeps luma fixed.
        let r: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let dot: f64 = (0..3).map(|k| r[k] * LUMA[k]).sum::<f64>() / LUMA.iter().map(|v| v * v).sum::<f64>();
        let v = [r[0] - dot * LUMA[0], r[1] - dot * LUMA[1], r[2] - dot * LUMA[2]];
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-9);
        // Shorten the offset rather than clip it so luma stays matched.
        let mut t = cfg.camouflage_shift / n;
        for k in 0..3 {
            if v[k] > 0.0 {
                t = t.min((1.0 - under[k]) / v[k]);
            } else if v[k] < 0.0 {
                t = t.min(under[k] / -v[k]);
            }
        }
        return [0, 1, 2].map(|k| (under[k] + t * v[k]).clamp(0.0, 1.0));
    }
    let gap = cfg.distractor_contrast;
    under.map(|u| {
        let below = (u - gap - COLOR_LO).max(0.0);
        let above = (COLOR_HI - u - gap).max(0.0);
        if below + above == 0.0 {
            return if u > 0.5 { COLOR_LO } else { COLOR_HI };
        }
        let t = rng.gen_range(0.0..below + above);
        if t < below {
            COLOR_LO + t
        } else {
            u + gap + (t - below)
        }
    })
}

/// Result of dressing one view.
pub(crate) struct Placement {
    pub image: Image,
    pub class_ids: Vec<u16>,
    pub distractors: Vec<Distractor>,
}

/// Pastes distractors onto `gt` until the covered fraction reaches the target.
pub(crate) fn place_view<R: Rng>(
    rng: &mut R,
    cfg: &SceneConfig,
    gt: &Image,
    previous: &[Distractor],
    next_class: &mut u16,
) -> Result<Placement> {
    let (w, h) = (gt.width, gt.height);
    let n = (w * h) as f64;
    let target = cfg.occlusion_ratio;
    let mut covered = vec![false; w * h];
    let mut count = 0usize;
    let mut accepted: Vec<Distractor> = Vec::new();

    let try_add = |d: &Distractor, covered: &mut Vec<bool>, count: &mut usize| -> Option<Vec<(usize, usize)>> {
        let px = d.pixels(w, h);
        let added = px.iter().filter(|&&(x, y)| !covered[y * w + x]).count();
        if added == 0 || (*count + added) as f64 / n > target + OVERSHOOT {
            return None;
        }
        for &(x, y) in &px {
            covered[y * w + x] = true;
        }
        *count += added;
        Some(px)
    };

    if target > 0.0 {
        for prev in previous {
            if (count as f64) / n >= target - 0.01 || !rng.gen_bool(cfg.recurring_fraction) {
                continue;
            }
            let mut d = prev.clone();
            d.center.0 += rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
            d.center.1 += rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
            if try_add(&d, &mut covered, &mut count).is_some() {
                accepted.push(d);
            }
        }
        let mut attempts = 0;
        while (count as f64) / n < target - 0.01 {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                break;
            }
            let mut d = random_shape(rng, cfg, w, h);
            // Shrink toward the minimum radius when a full-size shape overshoots.
            let mut placed = None;
            for _ in 0..4 {
                if let Some(px) = try_add(&d, &mut covered, &mut count) {
                    placed = Some(px);
                    break;
                }
                d.radius = (d.radius * 0.7).max(cfg.distractor_radius[0]);
            }
            if let Some(px) = placed {
                d.base = pick_base(rng, cfg, mean_under(gt, &px));
                d.class_id = *next_class;
                *next_class = next_class.wrapping_add(1).max(1);
                accepted.push(d);
            }
        }
        let achieved = count as f64 / n;
        // Never accept a view that stayed mostly clean, even inside the absolute tolerance.
        if (achieved - target).abs() > 0.05 || achieved < 0.5 * target {
            return Err(Error::Config(format!(
                "occlusion ratio {target} unreachable with distractor radius {:?} on {w}x{h} views (reached {achieved:.3})",
                cfg.distractor_radius
            )));
        }
    }

    let mut image = gt.clone();
    let mut class_ids = vec![0u16; w * h];
    for d in &accepted {
        for (x, y) in d.pixels(w, h) {
            image.set(x, y, d.color_at(x, y, cfg.distractor_texture));
            class_ids[y * w + x] = d.class_id;
        }
    }
    Ok(Placement {
        image,
        class_ids,
        distractors: accepted,
    })
}
