use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::composite::{composite, composite_backward, CompositeCache, RaySampleSet};
use super::field::{ImageField2D, Interp2, VoxelField3D, VoxelSample};
use crate::error::{Error, Result};
use crate::numkit::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// Samples per ray in voxel mode.
    pub n_samples: usize,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            n_samples: 64,
            background: [1.0; 3],
        }
    }
}

/// The trainable scene representation.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Flat(ImageField2D),
    Voxel(VoxelField3D),
}

/// What a rendered pixel needs for its backward pass.
#[derive(Clone, Debug)]
pub enum PixelCache {
    Flat(Interp2),
    Voxel(Box<VoxelRayCache>),
    /// Ray missed the scene; colour is the background and has no parameters.
    Background,
}

#[derive(Clone, Debug)]
pub struct VoxelRayCache {
    pub samples: RaySampleSet,
    pub points: Vec<VoxelSample>,
    pub composite: CompositeCache,
}

/// Per-pixel caches from [`render_pixels`], consumed by [`RenderTape::backward`].
#[derive(Clone, Debug, Default)]
pub struct RenderTape {
    pub caches: Vec<PixelCache>,
}

impl Field {
    /// Renders continuous pixel coordinate `(u, v)` of `camera`.
    ///
    /// In flat mode only the image size of `camera` matters: the pixel maps to
    /// `(u / width, v / height)` in the unit square. In voxel mode `jitter`
    /// holds one offset in `[0, 1)` per sample for stratified depths; `None`
    /// places samples at stratum midpoints.
    pub fn render_pixel(
        &self,
        values: &[f64],
        camera: &Camera,
        uv: (f64, f64),
        settings: &RenderSettings,
        jitter: Option<&[f64]>,
    ) -> Result<([f64; 3], PixelCache)> {
        match self {
            Field::Flat(f) => {
                let (u, v) = uv;
                if !(0.0..camera.width as f64).contains(&u) || !(0.0..camera.height as f64).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "pixel ({u}, {v}) outside {}x{} view",
                        camera.width, camera.height
                    )));
                }
                let (c, ip) = f.query(values, [u / camera.width as f64, v / camera.height as f64])?;
                Ok((c, PixelCache::Flat(ip)))
            }
            Field::Voxel(f) => {
                let ray = camera.generate_ray(uv.0, uv.1)?;
                let Some((near, far)) = f.intersect(ray.origin, ray.dir) else {
                    return Ok((settings.background, PixelCache::Background));
                };
                let n = settings.n_samples.max(1);
                if let Some(j) = jitter {
                    if j.len() != n {
                        return Err(Error::Dimension(format!("{} jitter values for {n} samples", j.len())));
                    }
                }
                let step = (far - near) / n as f64;
                let mut t = Vec::with_capacity(n);
                let mut points = Vec::with_capacity(n);
                for i in 0..n {
                    let off = jitter.map_or(0.5, |j| j[i]);
                    let ti = near + (i as f64 + off) * step;
                    t.push(ti);
                    points.push(f.query(values, ray.at(ti))?);
                }
                let samples = RaySampleSet {
                    t,
                    far,
                    sigma: points.iter().map(|p| p.sigma).collect(),
                    color: points.iter().map(|p| p.color).collect(),
                };
                let (c, comp) = composite(&samples, settings.background)?;
                Ok((
                    c,
                    PixelCache::Voxel(Box::new(VoxelRayCache {
                        samples,
                        points,
                        composite: comp,
                    })),
                ))
            }
        }
    }

    pub fn backward_pixel(&self, cache: &PixelCache, dcolor: [f64; 3], settings: &RenderSettings, grads: &mut [f64]) {
        match (self, cache) {
            (Field::Flat(f), PixelCache::Flat(ip)) => f.backward(ip, dcolor, grads),
            (Field::Voxel(f), PixelCache::Voxel(rc)) => {
                let (ds, dc) = composite_backward(&rc.samples, &rc.composite, settings.background, dcolor);
                for ((p, &s), &c) in rc.points.iter().zip(&ds).zip(&dc) {
                    f.backward(p, s, c, grads);
                }
            }
            _ => {}
        }
    }

    pub fn is_voxel(&self) -> bool {
        matches!(self, Field::Voxel(_))
    }
}

/// Stratified jitter for `n_rays` rays, drawn in ray order from `rng`.
pub fn draw_jitter<R: Rng>(rng: &mut R, n_rays: usize, n_samples: usize) -> Vec<f64> {
    (0..n_rays * n_samples).map(|_| rng.gen::<f64>()).collect()
}

/// Renders the pixel centres or sub-pixel coordinates listed in `pixels`.
///
/// `jitter`, when given, holds `pixels.len() * settings.n_samples` offsets.
pub fn render_pixels(
    field: &Field,
    params: &ParamStore,
    camera: &Camera,
    pixels: &[(f64, f64)],
    settings: &RenderSettings,
    jitter: Option<&[f64]>,
) -> Result<(Vec<[f64; 3]>, RenderTape)> {
    let n = settings.n_samples.max(1);
    if let Some(j) = jitter {
        if j.len() != pixels.len() * n {
            return Err(Error::Dimension(format!(
                "{} jitter values for {} rays x {n} samples",
                j.len(),
                pixels.len()
            )));
        }
    }
    let mut colors = Vec::with_capacity(pixels.len());
    let mut caches = Vec::with_capacity(pixels.len());
    for (i, &uv) in pixels.iter().enumerate() {
        let j = jitter.map(|j| &j[i * n..(i + 1) * n]);
        let (c, cache) = field.render_pixel(params.values(), camera, uv, settings, j)?;
        colors.push(c);
        caches.push(cache);
    }
    Ok((colors, RenderTape { caches }))
}

impl RenderTape {
    /// Accumulates `sum_i dcolors[i] . dC_i/dtheta` into `grads`.
    pub fn backward(&self, field: &Field, settings: &RenderSettings, dcolors: &[[f64; 3]], grads: &mut [f64]) -> Result<()> {
        if dcolors.len() != self.caches.len() {
            return Err(Error::Dimension(format!(
                "{} upstream colours for {} rendered pixels",
                dcolors.len(),
                self.caches.len()
            )));
        }
        for (cache, &d) in self.caches.iter().zip(dcolors) {
            field.backward_pixel(cache, d, settings, grads);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pixels(rng: &mut ChaCha8Rng, cam: &Camera, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.gen_range(0.0..cam.width as f64), rng.gen_range(0.0..cam.height as f64)))
            .collect()
    }

    #[test]
    fn constant_flat_field_renders_constant() {
        let mut store = ParamStore::new();
        let f = Field::Flat(ImageField2D::build(&mut store, 8, 8, [0.2, 0.5, 0.7]).unwrap());
        let cam = Camera::identity(16, 16, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let px = random_pixels(&mut rng, &cam, 40);
        let (cols, _) = render_pixels(&f, &store, &cam, &px, &RenderSettings::default(), None).unwrap();
        for c in cols {
            for (a, b) in c.iter().zip([0.2, 0.5, 0.7]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    fn voxel_scene(store: &mut ParamStore, raw_density: f64) -> (Field, Camera) {
        let f = VoxelField3D::build(store, [5, 5, 5], [-1.0; 3], [1.0; 3], raw_density, 0.0).unwrap();
        let cam = Camera::look_at([0.3, -3.0, 0.2], [0.0; 3], [0.0, 0.0, 1.0], 12.0, 12, 10).unwrap();
        (Field::Voxel(f), cam)
    }

    #[test]
    fn zero_density_voxels_render_background() {
        let mut store = ParamStore::new();
        // softplus(-800) underflows to exactly zero.
        let (f, cam) = voxel_scene(&mut store, -800.0);
        let settings = RenderSettings {
            n_samples: 16,
            background: [0.1, 0.9, 0.4],
        };
        let px: Vec<(f64, f64)> = (0..10).flat_map(|y| (0..12).map(move |x| (x as f64 + 0.5, y as f64 + 0.5))).collect();
        let (cols, _) = render_pixels(&f, &store, &cam, &px, &settings, None).unwrap();
        for c in cols {
            assert_eq!(c, settings.background);
        }
    }

    #[test]
    fn flat_render_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let f = Field::Flat(ImageField2D::build(&mut store, 5, 4, [0.0; 3]).unwrap());
            store.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..1.5));
            let cam = Camera::identity(9, 7, 5.0);
            let px = random_pixels(&mut rng, &cam, 16);
            let settings = RenderSettings::default();
            let loss = |p: &ParamStore| {
                let (c, _) = render_pixels(&f, p, &cam, &px, &settings, None).unwrap();
                c.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>()
            };
            let (cols, tape) = render_pixels(&f, &store, &cam, &px, &settings, None).unwrap();
            let d: Vec<[f64; 3]> = cols.iter().map(|c| [2.0 * c[0], 2.0 * c[1], 2.0 * c[2]]).collect();
            store.zero_grads();
            let mut g = vec![0.0; store.len()];
            tape.backward(&f, &settings, &d, &mut g).unwrap();
            store.grads_mut().copy_from_slice(&g);
            let r = grad_check(loss, &mut store, 1e-5, 1e-5);
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn voxel_render_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let (f, cam) = voxel_scene(&mut store, 0.0);
            store.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
            let settings = RenderSettings {
                n_samples: 12,
                background: [1.0; 3],
            };
            let px = random_pixels(&mut rng, &cam, 16);
            let jitter = draw_jitter(&mut rng, px.len(), settings.n_samples);
            let loss = |p: &ParamStore| {
                let (c, _) = render_pixels(&f, p, &cam, &px, &settings, Some(&jitter)).unwrap();
                c.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>()
            };
            let (cols, tape) = render_pixels(&f, &store, &cam, &px, &settings, Some(&jitter)).unwrap();
            let d: Vec<[f64; 3]> = cols.iter().map(|c| [2.0 * c[0], 2.0 * c[1], 2.0 * c[2]]).collect();
            let mut g = vec![0.0; store.len()];
            tape.backward(&f, &settings, &d, &mut g).unwrap();
            store.grads_mut().copy_from_slice(&g);
            let r = grad_check(loss, &mut store, 1e-5, 1e-5);
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let mut store = ParamStore::new();
        let f = Field::Flat(ImageField2D::build(&mut store, 2, 2, [0.0; 3]).unwrap());
        let cam = Camera::identity(4, 4, 2.0);
        assert!(render_pixels(&f, &store, &cam, &[(4.0, 0.5)], &RenderSettings::default(), None).is_err());
    }
}
