use rand::Rng;
use rand_distr::StandardNormal;

use super::cloud::StereoCloud;
use crate::data::camera::PinholeCamera;
use crate::data::mesh::TriMesh;
use crate::data::raster::render;
use crate::error::Result;
use crate::image::Mask;
use crate::math;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;

/// Back-projects every finite-depth pixel (restricted to `select` when given)
/// and perturbs it with isotropic Gaussian noise of standard deviation `noise_std`.
pub fn back_project_depth<R: Rng + ?Sized>(
    depth: impl Fn(usize, usize) -> f64,
    camera: &PinholeCamera,
    view: usize,
    select: Option<&Mask>,
    noise_std: f64,
    rng: &mut R,
) -> Result<StereoCloud> {
    let basis = camera.validate()?;
    let mut cloud = StereoCloud::default();
    for r in 0..camera.height {
        for c in 0..camera.width {
            if select.is_some_and(|m| !m.get(r, c)) {
                continue;
            }
            let d = depth(r, c);
            if !d.is_finite() {
                continue;
            }
            let mut p = camera.back_project_with(&basis, r, c, d);
            if noise_std > 0.0 {
                for v in &mut p {
                    let n: f64 = rng.sample(StandardNormal);
                    *v += noise_std * n;
                }
            }
            cloud.push(p, view, (r, c));
        }
    }
    Ok(cloud)
}

/// Synthetic multi-view stereo: renders depth per camera and back-projects the
/// foreground with noise `noise_sigma × longest bounding-box edge`.
pub fn synth_stereo<R: Rng + ?Sized>(
    mesh: &TriMesh,
    cameras: &[PinholeCamera],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<StereoCloud> {
    let (lo, hi) = mesh.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let noise_std = noise_sigma * extent;
    let mut cloud = StereoCloud::default();
    for (view, cam) in cameras.iter().enumerate() {
        let r = render(mesh, cam)?;
        cloud.extend(back_project_depth(
            |y, x| r.depth(y, x),
            cam,
            view,
            None,
            noise_std,
            rng,
        )?);
    }
    Ok(cloud)
}

/// Longest axis-aligned extent of a point set.
pub fn extent(points: &[math::Vec3]) -> f64 {
    math::bounds(points)
        .map(|(lo, hi)| (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max))
        .unwrap_or(0.0)
}
