use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::distractors::{place_view, Distractor};
use super::{Dataset, SceneConfig, SceneMode, TestView, View};
use crate::error::{Error, Result};
use crate::features::{builtin_descriptor, oracle_features, FeatureMap, FeatureProviderKind};
use crate::fieldrender::{render_pixels, Camera, Field, RenderSettings, VoxelField3D};
use crate::numkit::ParamStore;
use crate::raster::Image;

/// World-space bounds of voxel scenes.
pub const VOXEL_BOUNDS: ([f64; 3], [f64; 3]) = ([-1.0; 3], [1.0; 3]);

const GT_MIN: f64 = 0.05;
const GT_MAX: f64 = 0.95;
const GT_TEXTURE: f64 = 0.04;
const RING_RADIUS: f64 = 3.2;
const FOCAL_SCALE: f64 = 0.8;

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]
}

/// Procedural clean image: two-colour gradient, a low-frequency ripple,
/// 3 to 6 flat shapes and fine texture, quantized to 8 bits.
pub fn ground_truth_flat(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ga, gb) = (angle.cos(), angle.sin());
    let freq = [rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0)];
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let ripple = random_color(&mut rng).map(|v| 0.15 * (v - 0.5));

    struct Shape {
        disk: bool,
        c: (f64, f64),
        r: (f64, f64),
        color: [f64; 3],
    }
    let scale = width.min(height) as f64;
    let shapes: Vec<Shape> = (0..rng.gen_range(3..=6))
        .map(|_| Shape {
            disk: rng.gen_bool(0.5),
            c: (rng.gen_range(0.1..0.9) * width as f64, rng.gen_range(0.1..0.9) * height as f64),
            r: (rng.gen_range(0.08..0.22) * scale, rng.gen_range(0.08..0.22) * scale),
            color: random_color(&mut rng),
        })
        .collect();

    let mut img = Image::from_fn(width, height, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64);
        let t = (0.5 + 0.5 * (ga * (u - 0.5) + gb * (v - 0.5)) * std::f64::consts::SQRT_2).clamp(0.0, 1.0);
        let wave = (std::f64::consts::TAU * (freq[0] * u + freq[1] * v) + phase).sin();
        let mut c = [0, 1, 2].map(|k| c0[k] + (c1[k] - c0[k]) * t + ripple[k] * wave);
        for s in &shapes {
            let (dx, dy) = ((x as f64 + 0.5 - s.c.0) / s.r.0, (y as f64 + 0.5 - s.c.1) / s.r.1);
            let inside = if s.disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
            if inside {
                c = s.color;
            }
        }
        c
    });
    for v in &mut img.data {
        *v = (*v + GT_TEXTURE * rng.gen_range(-1.0..1.0)).clamp(GT_MIN, GT_MAX);
    }
    img.quantize_8bit();
    img
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Random box and blob density scene on a `grid`^3 lattice.
fn ground_truth_voxel(rng: &mut ChaCha8Rng, grid: usize) -> Result<(Field, ParamStore)> {
    let mut store = ParamStore::new();
    let (bmin, bmax) = VOXEL_BOUNDS;
    let field = VoxelField3D::build(&mut store, [grid; 3], bmin, bmax, -8.0, 0.0)?;
    enum Solid {
        Box([f64; 3], [f64; 3]),
        Ball([f64; 3], f64),
    }
    let solids: Vec<(Solid, [f64; 3])> = (0..rng.gen_range(3..=5))
        .map(|_| {
            let c = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let s = if rng.gen_bool(0.5) {
                Solid::Box(c, [rng.gen_range(0.15..0.4), rng.gen_range(0.15..0.4), rng.gen_range(0.15..0.4)])
            } else {
                Solid::Ball(c, rng.gen_range(0.2..0.45))
            };
            (s, random_color(rng))
        })
        .collect();
    let d_off = store.segment("density").map(|s| s.offset).unwrap_or(0);
    let c_off = store.segment("color").map(|s| s.offset).unwrap_or(0);
    let values = store.values_mut();
    for iz in 0..grid {
        for iy in 0..grid {
            for ix in 0..grid {
                let p = field.node_position(ix, iy, iz);
                let n = field.node_index(ix, iy, iz);
                for (solid, color) in &solids {
                    let inside = match solid {
                        Solid::Box(c, h) => (0..3).all(|k| (p[k] - c[k]).abs() <= h[k]),
                        Solid::Ball(c, r) => (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>() <= r * r,
                    };
                    if inside {
                        values[d_off + n] = 8.0;
                        for k in 0..3 {
                            values[c_off + 3 * n + k] = logit(color[k]);
                        }
                    }
                }
            }
        }
    }
    Ok((Field::Voxel(field), store))
}

fn ring_camera(angle: f64, elevation: f64, w: usize, h: usize) -> Result<Camera> {
    let eye = [
        RING_RADIUS * angle.cos() * elevation.cos(),
        RING_RADIUS * angle.sin() * elevation.cos(),
        RING_RADIUS * elevation.sin(),
    ];
    Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], FOCAL_SCALE * w as f64, w, h)
}

fn render_view(field: &Field, store: &ParamStore, camera: &Camera, samples: usize) -> Result<Image> {
    let pixels: Vec<(f64, f64)> = (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x as f64 + 0.5, y as f64 + 0.5)))
        .collect();
    let settings = RenderSettings {
        n_samples: samples,
        ..RenderSettings::default()
    };
    let rows: Vec<Vec<[f64; 3]>> = pixels
        .par_chunks(camera.width)
        .map(|row| render_pixels(field, store, camera, row, &settings, None).map(|(c, _)| c))
        .collect::<Result<_>>()?;
    let mut img = Image::from_fn(camera.width, camera.height, |x, y| rows[y][x]);
    img.quantize_8bit();
    Ok(img)
}

fn compute_features(cfg: &SceneConfig, view: usize, image: &Image, mask: &[bool], class_ids: &[u16]) -> Result<FeatureMap> {
    match cfg.feature_provider {
        FeatureProviderKind::BuiltinDescriptor => builtin_descriptor(image),
        FeatureProviderKind::Oracle => oracle_features(
            image.width,
            image.height,
            mask,
            class_ids,
            cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(view as u64),
        ),
        FeatureProviderKind::File => Err(Error::Config(
            "feature_provider=file needs precomputed maps; generate with builtin_descriptor or oracle".into(),
        )),
    }
}

/// Builds a full dataset from `cfg`. Deterministic in `cfg`.
pub fn gen_scene(cfg: &SceneConfig) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.feature_provider == FeatureProviderKind::File {
        compute_features(cfg, 0, &Image::filled(1, 1, [0.0; 3]), &[], &[])?;
    }
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Clean per-view targets and cameras.
    let (train_gt, train_cams, test): (Vec<Image>, Vec<Camera>, Vec<TestView>) = match cfg.mode {
        SceneMode::Flat2d => {
            let gt = ground_truth_flat(rng.gen(), w, h);
            let cam = Camera::identity(w, h, w as f64);
            let test = (0..cfg.n_test)
                .map(|_| TestView {
                    image: gt.clone(),
                    camera: cam.clone(),
                })
                .collect();
            (vec![gt; cfg.n_views], vec![cam; cfg.n_views], test)
        }
        SceneMode::Voxel3d => {
            let (field, store) = ground_truth_voxel(&mut rng, cfg.gt_grid)?;
            let elev = 25f64.to_radians();
            let tau = std::f64::consts::TAU;
            let cams: Vec<Camera> = (0..cfg.n_views)
                .map(|i| ring_camera(tau * i as f64 / cfg.n_views as f64, elev, w, h))
                .collect::<Result<_>>()?;
            let test_cams: Vec<Camera> = (0..cfg.n_test)
                .map(|j| ring_camera(tau * (j as f64 + 0.5) / cfg.n_test.max(1) as f64 + 0.1, elev + 0.15, w, h))
                .collect::<Result<_>>()?;
            let gts = cams
                .iter()
                .map(|c| render_view(&field, &store, c, cfg.gt_samples))
                .collect::<Result<Vec<_>>>()?;
            let test = test_cams
                .into_iter()
                .map(|c| {
                    Ok(TestView {
                        image: render_view(&field, &store, &c, cfg.gt_samples)?,
                        camera: c,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (gts, cams, test)
        }
    };

    let (train_gt, test) = if cfg.exposure == 1.0 {
        (train_gt, test)
    } else {
        let expose = |img: &Image| {
            let mut out = img.clone();
            out.data.iter_mut().for_each(|v| *v *= cfg.exposure);
            out.quantize_8bit();
            out
        };
        let test = test
            .into_iter()
            .map(|t| TestView {
                image: expose(&t.image),
                camera: t.camera,
            })
            .collect();
        (train_gt.iter().map(expose).collect(), test)
    };

    let mut previous: Vec<Distractor> = Vec::new();
    let mut next_class = 1u16;
    let mut dressed = Vec::with_capacity(cfg.n_views);
    for gt in &train_gt {
        let mut p = place_view(&mut rng, cfg, gt, &previous, &mut next_class)?;
        p.image.quantize_8bit();
        let mask: Vec<bool> = (0..w * h).map(|i| p.image.data[3 * i..3 * i + 3] != gt.data[3 * i..3 * i + 3]).collect();
        previous = std::mem::take(&mut p.distractors);
        dressed.push((p.image, mask, p.class_ids));
    }

    let train = dressed
        .into_par_iter()
        .zip(train_cams)
        .enumerate()
        .map(|(i, ((image, mask, class_ids), camera))| {
            let features = compute_features(cfg, i, &image, &mask, &class_ids)?;
            Ok(View {
                image,
                camera,
                features,
                mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        config: cfg.clone(),
        train,
        test,
    })
}
