use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera. Camera frame looks down +z with x right and y down;
/// `pose` maps camera coordinates to world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 3x4 `[R | t]`, world-from-camera.
    pub pose: [[f64; 4]; 3],
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

pub const IDENTITY_POSE: [[f64; 4]; 3] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, pose: [[f64; 4]; 3], width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            pose,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Identity pose, principal point at the image centre.
    pub fn identity(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            pose: IDENTITY_POSE,
            width,
            height,
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up
    /// direction (image y points against it).
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = normalize(sub(target, eye)).ok_or_else(|| Error::InvalidInput("eye equals target".into()))?;
        let right = normalize(cross(forward, up)).ok_or_else(|| Error::InvalidInput("up is parallel to view direction".into()))?;
        let down = cross(forward, right);
        let mut pose = [[0.0; 4]; 3];
        for r in 0..3 {
            pose[r] = [right[r], down[r], forward[r], eye[r]];
        }
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, pose, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera has zero image size".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let err = self.rotation_error();
        if !(err <= 1e-6) {
            return Err(Error::InvalidInput(format!(
                "camera rotation is not orthonormal (max |RᵀR - I| = {err:.3e})"
            )));
        }
        Ok(())
    }

    /// Largest entry of `|RᵀR - I|`.
    pub fn rotation_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| self.pose[k][i] * self.pose[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Ray through continuous pixel coordinate `(u, v)`; pixel `(x, y)` has
    /// its centre at `(x + 0.5, y + 0.5)`.
    pub fn generate_ray(&self, u: f64, v: f64) -> Result<Ray> {
        if !(0.0..self.width as f64).contains(&u) || !(0.0..self.height as f64).contains(&v) {
            return Err(Error::InvalidInput(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let d_cam = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let mut d = [0.0; 3];
        for (r, dr) in d.iter_mut().enumerate() {
            *dr = (0..3).map(|k| self.pose[r][k] * d_cam[k]).sum();
        }
        let dir = normalize(d).ok_or_else(|| Error::InvalidInput("degenerate ray direction".into()))?;
        Ok(Ray {
            origin: self.center(),
            dir,
        })
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    if n > 0.0 && n.is_finite() {
        Some([a[0] / n, a[1] / n, a[2] / n])
    } else {
        None
    }
}
