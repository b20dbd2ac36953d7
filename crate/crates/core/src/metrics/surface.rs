use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fps, PointSample, DEFAULT_SAMPLE_SIZE};
use crate::data::{eval_ring, render, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::{back_project_depth, VoxelGrid};

/// Exposed faces of the active voxels as a triangle mesh in `[-0.5, 0.5]³`.
pub fn voxel_surface_mesh(grid: &VoxelGrid) -> Result<TriMesh> {
    let n = grid.resolution();
    let mut vertices = Vec::new();
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertex = |c: [usize; 3], vertices: &mut Vec<[f64; 3]>| {
        *index.entry(c).or_insert_with(|| {
            vertices.push(c.map(|x| x as f64 / n as f64 - 0.5));
            vertices.len() - 1
        })
    };
    let active = |i: isize, j: isize, k: isize| {
        let r = 0..n as isize;
        r.contains(&i) && r.contains(&j) && r.contains(&k) && grid.get(i as usize, j as usize, k as usize)
    };
    let mut faces = Vec::new();
    for [i, j, k] in grid.active().collect::<Vec<_>>() {
        let (a, b, c) = (i as isize, j as isize, k as isize);
        for axis in 0..3 {
            for side in [0usize, 1] {
                let mut nb = [a, b, c];
                nb[axis] += if side == 1 { 1 } else { -1 };
                if active(nb[0], nb[1], nb[2]) {
                    continue;
                }
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut corner = |du: usize, dv: usize| {
                    let mut p = [i, j, k];
                    p[axis] += side;
                    p[u] += du;
                    p[v] += dv;
                    vertex(p, &mut vertices)
                };
                let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                // Outward winding for the positive side, reversed otherwise.
                if side == 1 {
                    faces.push([q[0], q[1], q[2]]);
                    faces.push([q[0], q[2], q[3]]);
                } else {
                    faces.push([q[0], q[2], q[1]]);
                    faces.push([q[0], q[3], q[2]]);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::Undefined("surface of an empty voxel grid".into()));
    }
    TriMesh::new(vertices, faces)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalPointConfig {
    /// Render size of each evaluation-ring view.
    pub resolution: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for EvalPointConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
        }
    }
}

/// Back-projects the evaluation-ring depth renders of the voxel surface and
/// reduces them to a fixed-size sample by farthest point sampling.
pub fn eval_points(grid: &VoxelGrid, cfg: &EvalPointConfig) -> Result<PointSample> {
    let mesh = voxel_surface_mesh(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::new();
    for (view, cam) in eval_ring(cfg.resolution, cfg.resolution).iter().enumerate() {
        let r = render(&mesh, cam)?;
        points.extend(back_project_depth(|y, x| r.depth(y, x), cam, view, None, 0.0, &mut rng)?.points);
    }
    if points.is_empty() {
        return Err(Error::Undefined("no surface visible from the evaluation ring".into()));
    }
    fps(&points, cfg.sample_size, cfg.seed)
}
