use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Pinhole camera. Pixel `(row, col)` covers `[col, col+1) × [row, row+1)`
/// in image coordinates with rows growing downward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal camera frame: `right`, `up`, `forward` (viewing direction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraBasis {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

/// Projection of a world point: continuous image coordinates and view depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub col: f64,
    pub row: f64,
    pub depth: f64,
}

impl Projected {
    /// Integer pixel containing the projection, if inside the image.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let (r, c) = (self.row.floor(), self.col.floor());
        (r >= 0.0 && c >= 0.0 && (r as usize) < height && (c as usize) < width).then(|| (r as usize, c as usize))
    }
}

impl PinholeCamera {
    pub fn validate(&self) -> Result<CameraBasis> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Contract(format!(
                "field of view {} outside (0, 180)",
                self.fov_deg
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract("camera image is empty".into()));
        }
        let forward = math::normalize(math::sub(self.look_at, self.position))
            .ok_or_else(|| Error::Contract("camera position equals look-at".into()))?;
        let right = math::normalize(math::cross(forward, self.up))
            .ok_or_else(|| Error::Contract("camera up is parallel to view direction".into()))?;
        let up = math::cross(right, forward);
        Ok(CameraBasis { right, up, forward })
    }

    pub fn basis(&self) -> CameraBasis {
        self.validate().expect("invalid camera")
    }

    /// Focal length in pixels, from the vertical field of view.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    pub fn to_view(&self, basis: &CameraBasis, p: Vec3) -> Vec3 {
        let d = math::sub(p, self.position);
        [
            math::dot(d, basis.right),
            math::dot(d, basis.up),
            math::dot(d, basis.forward),
        ]
    }

    pub fn project_view(&self, v: Vec3) -> Projected {
        let f = self.focal_px();
        Projected {
            col: 0.5 * self.width as f64 + f * v[0] / v[2],
            row: 0.5 * self.height as f64 - f * v[1] / v[2],
            depth: v[2],
        }
    }

    pub fn project(&self, p: Vec3) -> Projected {
        let b = self.basis();
        self.project_view(self.to_view(&b, p))
    }

    /// World point on the ray through the centre of `(row, col)` at view depth `depth`.
    pub fn back_project(&self, row: usize, col: usize, depth: f64) -> Vec3 {
        self.back_project_with(&self.basis(), row, col, depth)
    }

    pub fn back_project_with(&self, b: &CameraBasis, row: usize, col: usize, depth: f64) -> Vec3 {
        let f = self.focal_px();
        let x = (col as f64 + 0.5 - 0.5 * self.width as f64) * depth / f;
        let y = (0.5 * self.height as f64 - (row as f64 + 0.5)) * depth / f;
        let mut p = self.position;
        p = math::add(p, math::scale(b.right, x));
        p = math::add(p, math::scale(b.up, y));
        math::add(p, math::scale(b.forward, depth))
    }

    /// Camera on a sphere around the origin, `z` up.
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64, radius: f64, fov_deg: f64, width: usize, height: usize) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        Self {
            position: [
                radius * el.cos() * az.cos(),
                radius * el.cos() * az.sin(),
                radius * el.sin(),
            ],
            look_at: [0.0; 3],
            up: [0.0, 0.0, 1.0],
            fov_deg,
            width,
            height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSampling {
    pub radius: f64,
    pub elevation_deg: (f64, f64),
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSampling {
    fn default() -> Self {
        Self {
            radius: 2.0,
            elevation_deg: (-75.0, 75.0),
            fov_deg: 40.0,
            width: 128,
            height: 128,
        }
    }
}

/// Cameras with uniform azimuth and uniform elevation inside the limits,
/// all looking at the origin.
pub fn sample_cameras<R: Rng + ?Sized>(count: usize, cfg: &CameraSampling, rng: &mut R) -> Result<Vec<PinholeCamera>> {
    if count == 0 {
        return Err(Error::Contract("camera count must be positive".into()));
    }
    let (lo, hi) = cfg.elevation_deg;
    if !(lo <= hi && lo > -90.0 && hi < 90.0) {
        return Err(Error::Contract(format!(
            "elevation limits ({lo}, {hi}) must satisfy -90 < lo <= hi < 90"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let az = rng.gen_range(0.0..360.0);
            let el = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            PinholeCamera::orbit(az, el, cfg.radius, cfg.fov_deg, cfg.width, cfg.height)
        })
        .collect())
}

pub const EVAL_RING_ELEVATION_DEG: f64 = 15.0;
pub const EVAL_RING_RADIUS: f64 = 2.0;
pub const EVAL_RING_FOV_DEG: f64 = 40.0;

/// Eight cameras at 45° azimuth spacing used for metric point sampling.
pub fn eval_ring(width: usize, height: usize) -> Vec<PinholeCamera> {
    (0..8)
        .map(|i| {
            PinholeCamera::orbit(
                45.0 * i as f64,
                EVAL_RING_ELEVATION_DEG,
                EVAL_RING_RADIUS,
                EVAL_RING_FOV_DEG,
                width,
                height,
            )
        })
        .collect()
}
