use crate::error::{Error, Result};
use crate::numkit::{sigmoid, softplus, ParamStore};

/// Bilinear footprint of a 2D query: up to four nodes and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interp2 {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

/// Dense colour grid sampled bilinearly over `[0, 1]^2`.
///
/// Node `(i, j)` sits at `((j + 0.5) / width, (i + 0.5) / height)`, so a grid
/// with the image's resolution reproduces node values exactly at pixel
/// centres. Queries outside the node lattice clamp to the border nodes.
/// Colours are unconstrained; clamping to `[0, 1]` happens at export only.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageField2D {
    pub width: usize,
    pub height: usize,
    offset: usize,
}

pub const FLAT_COLOR_SEGMENT: &str = "color";

impl ImageField2D {
    pub fn build(store: &mut ParamStore, width: usize, height: usize, init: [f64; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("2d field resolution must be positive".into()));
        }
        let range = store.add_segment(FLAT_COLOR_SEGMENT, &[height, width, 3])?;
        for (i, v) in store.values_mut()[range.clone()].iter_mut().enumerate() {
            *v = init[i % 3];
        }
        Ok(Self {
            width,
            height,
            offset: range.start,
        })
    }

    pub fn attach(store: &ParamStore) -> Result<Self> {
        let seg = store.segment(FLAT_COLOR_SEGMENT).ok_or_else(|| Error::Segment {
            name: FLAT_COLOR_SEGMENT.into(),
            message: "missing for 2d field".into(),
        })?;
        match seg.shape[..] {
            [h, w, 3] => Ok(Self {
                width: w,
                height: h,
                offset: seg.offset,
            }),
            _ => Err(Error::Segment {
                name: seg.name.clone(),
                message: format!("expected shape [H, W, 3], got {:?}", seg.shape),
            }),
        }
    }

    pub fn interp(&self, pos: [f64; 2]) -> Result<Interp2> {
        if pos.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite query position {pos:?}")));
        }
        let (x0, x1, tx) = axis(pos[0] * self.width as f64 - 0.5, self.width);
        let (y0, y1, ty) = axis(pos[1] * self.height as f64 - 0.5, self.height);
        Ok(Interp2 {
            nodes: [
                y0 * self.width + x0,
                y0 * self.width + x1,
                y1 * self.width + x0,
                y1 * self.width + x1,
            ],
            weights: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
        })
    }

    pub fn eval(&self, values: &[f64], ip: &Interp2) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (&n, &w) in ip.nodes.iter().zip(&ip.weights) {
            let base = self.offset + n * 3;
            for k in 0..3 {
                c[k] += w * values[base + k];
            }
        }
        c
    }

    pub fn query(&self, values: &[f64], pos: [f64; 2]) -> Result<([f64; 3], Interp2)> {
        let ip = self.interp(pos)?;
        Ok((self.eval(values, &ip), ip))
    }

    pub fn backward(&self, ip: &Interp2, dcolor: [f64; 3], grads: &mut [f64]) {
        for (&n, &w) in ip.nodes.iter().zip(&ip.weights) {
            let base = self.offset + n * 3;
            for k in 0..3 {
                grads[base + k] += w * dcolor[k];
            }
        }
    }
}

/// Lower node, upper node and fractional weight for a clamped lattice coordinate.
fn axis(g: f64, n: usize) -> (usize, usize, f64) {
    let g = g.clamp(0.0, (n - 1) as f64);
    let i0 = (g.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, g - i0 as f64)
}

/// Trilinear footprint of a 3D query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interp3 {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

/// Density and colour at a point, with what the backward pass needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelSample {
    pub sigma: f64,
    pub color: [f64; 3],
    pub raw_sigma: f64,
    pub raw_color: [f64; 3],
    /// `None` outside the grid bounds, where density is zero and nothing is trainable.
    pub interp: Option<Interp3>,
}

/// Dense voxel grid of raw density and colour. Density is `softplus(raw)`,
/// colour is `sigmoid(raw)`; both are interpolated in raw space. Nodes span
/// the bounds inclusively.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelField3D {
    pub dims: [usize; 3],
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    density_offset: usize,
    color_offset: usize,
}

pub const DENSITY_SEGMENT: &str = "density";
pub const VOXEL_COLOR_SEGMENT: &str = "color";

impl VoxelField3D {
    pub fn build(
        store: &mut ParamStore,
        dims: [usize; 3],
        bounds_min: [f64; 3],
        bounds_max: [f64; 3],
        raw_density: f64,
        raw_color: f64,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(format!("voxel grid needs at least 2 nodes per axis, got {dims:?}")));
        }
        if (0..3).any(|k| !(bounds_max[k] > bounds_min[k])) {
            return Err(Error::Config("voxel bounds must have positive extent".into()));
        }
        let [nx, ny, nz] = dims;
        let d = store.add_segment(DENSITY_SEGMENT, &[nz, ny, nx])?;
        let c = store.add_segment(VOXEL_COLOR_SEGMENT, &[nz, ny, nx, 3])?;
        store.values_mut()[d.clone()].iter_mut().for_each(|v| *v = raw_density);
        store.values_mut()[c.clone()].iter_mut().for_each(|v| *v = raw_color);
        Ok(Self {
            dims,
            bounds_min,
            bounds_max,
            density_offset: d.start,
            color_offset: c.start,
        })
    }

    pub fn attach(store: &ParamStore, bounds_min: [f64; 3], bounds_max: [f64; 3]) -> Result<Self> {
        let d = store.segment(DENSITY_SEGMENT).ok_or_else(|| Error::Segment {
            name: DENSITY_SEGMENT.into(),
            message: "missing for voxel field".into(),
        })?;
        let c = store.segment(VOXEL_COLOR_SEGMENT).ok_or_else(|| Error::Segment {
            name: VOXEL_COLOR_SEGMENT.into(),
            message: "missing for voxel field".into(),
        })?;
        let dims = match d.shape[..] {
            [nz, ny, nx] => [nx, ny, nz],
            _ => {
                return Err(Error::Segment {
                    name: d.name.clone(),
                    message: format!("expected shape [Nz, Ny, Nx], got {:?}", d.shape),
                })
            }
        };
        if c.shape != [dims[2], dims[1], dims[0], 3] {
            return Err(Error::Segment {
                name: c.name.clone(),
                message: format!("shape {:?} does not match density grid", c.shape),
            });
        }
        Ok(Self {
            dims,
            bounds_min,
            bounds_max,
            density_offset: d.offset,
            color_offset: c.offset,
        })
    }

    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let idx = [ix, iy, iz];
        let mut p = [0.0; 3];
        for k in 0..3 {
            let ext = self.bounds_max[k] - self.bounds_min[k];
            p[k] = self.bounds_min[k] + ext * idx[k] as f64 / (self.dims[k] - 1) as f64;
        }
        p
    }

    pub fn contains(&self, pos: [f64; 3]) -> bool {
        (0..3).all(|k| pos[k] >= self.bounds_min[k] && pos[k] <= self.bounds_max[k])
    }

    pub fn interp(&self, pos: [f64; 3]) -> Option<Interp3> {
        if !self.contains(pos) {
            return None;
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0; 3];
        for k in 0..3 {
            let ext = self.bounds_max[k] - self.bounds_min[k];
            let g = (pos[k] - self.bounds_min[k]) / ext * (self.dims[k] - 1) as f64;
            let (a, b, f) = axis(g, self.dims[k]);
            lo[k] = a;
            hi[k] = b;
            t[k] = f;
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0.0; 8];
        for corner in 0..8 {
            let pick = |k: usize| (corner >> k) & 1 == 1;
            let ix = if pick(0) { hi[0] } else { lo[0] };
            let iy = if pick(1) { hi[1] } else { lo[1] };
            let iz = if pick(2) { hi[2] } else { lo[2] };
            nodes[corner] = self.node_index(ix, iy, iz);
            weights[corner] = (0..3).map(|k| if pick(k) { t[k] } else { 1.0 - t[k] }).product();
        }
        Some(Interp3 { nodes, weights })
    }

    pub fn query(&self, values: &[f64], pos: [f64; 3]) -> Result<VoxelSample> {
        if pos.iter().any(|p| p.is_nan()) {
            return Err(Error::InvalidInput(format!("NaN query position {pos:?}")));
        }
        let Some(ip) = self.interp(pos) else {
            return Ok(VoxelSample {
                sigma: 0.0,
                color: [0.0; 3],
                raw_sigma: f64::NEG_INFINITY,
                raw_color: [0.0; 3],
                interp: None,
            });
        };
        let mut raw_sigma = 0.0;
        let mut raw_color = [0.0; 3];
        for (&n, &w) in ip.nodes.iter().zip(&ip.weights) {
            raw_sigma += w * values[self.density_offset + n];
            let base = self.color_offset + 3 * n;
            for k in 0..3 {
                raw_color[k] += w * values[base + k];
            }
        }
        Ok(VoxelSample {
            sigma: softplus(raw_sigma),
            color: [sigmoid(raw_color[0]), sigmoid(raw_color[1]), sigmoid(raw_color[2])],
            raw_sigma,
            raw_color,
            interp: Some(ip),
        })
    }

    pub fn backward(&self, sample: &VoxelSample, dsigma: f64, dcolor: [f64; 3], grads: &mut [f64]) {
        let Some(ip) = &sample.interp else { return };
        let g_sigma = dsigma * sigmoid(sample.raw_sigma);
        let mut g_color = [0.0; 3];
        for k in 0..3 {
            g_color[k] = dcolor[k] * sample.color[k] * (1.0 - sample.color[k]);
        }
        for (&n, &w) in ip.nodes.iter().zip(&ip.weights) {
            grads[self.density_offset + n] += w * g_sigma;
            let base = self.color_offset + 3 * n;
            for k in 0..3 {
                grads[base + k] += w * g_color[k];
            }
        }
    }

    /// Entry and exit depths of `ray` through the bounds, if it hits them ahead of the origin.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < self.bounds_min[k] || origin[k] > self.bounds_max[k] {
                    return None;
                }
                continue;
            }
            let a = (self.bounds_min[k] - origin[k]) / dir[k];
            let b = (self.bounds_max[k] - origin[k]) / dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 > t0).then_some((t0, t1))
    }
}
