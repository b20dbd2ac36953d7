//! Point-cloud and voxel metrics for generated shapes.

mod report;
mod surface;

pub use report::{evaluate_pairs, AggregateMetrics, EvalPair, EvalReport, ObjectMetrics};
pub use surface::{eval_points, voxel_surface_mesh, EvalPointConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::math::{self, Vec3};

pub const DEFAULT_SAMPLE_SIZE: usize = 4096;

/// Fixed-size point sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSample {
    pub points: Vec<Vec3>,
    /// Set when the source had fewer points and some were repeated.
    pub padded: bool,
}

/// Farthest point sampling: a seeded random start, then repeatedly the point
/// with the largest distance to the chosen set (lowest index on ties).
pub fn fps(points: &[Vec3], size: usize, seed: u64) -> Result<PointSample> {
    if points.is_empty() {
        return Err(Error::Contract("farthest point sampling of an empty cloud".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..points.len());
    let take = size.min(points.len());
    let mut chosen = Vec::with_capacity(size);
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..take {
        chosen.push(points[current]);
        dist[current] = -1.0;
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            if dist[i] < 0.0 {
                continue;
            }
            let d = math::dist2(*p, c);
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    let padded = size > points.len();
    while chosen.len() < size {
        chosen.push(points[rng.gen_range(0..points.len())]);
    }
    Ok(PointSample { points: chosen, padded })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferMode {
    /// Mean squared nearest-neighbour distance in each direction.
    #[default]
    Squared,
    /// Mean Euclidean nearest-neighbour distance in each direction.
    Unsquared,
}

/// Uniform grid over a point set for exact nearest-neighbour queries.
struct NearestGrid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> NearestGrid<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let (lo, hi) = math::bounds(points).expect("nonempty");
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1);
        let mut grid = NearestGrid {
            points,
            origin: lo,
            cell,
            dims,
            start: Vec::new(),
            order: Vec::new(),
        };
        let cells = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(*p))).collect();
        let mut counts = vec![0usize; cells + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.start = counts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            c.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Exact minimum squared distance from `p` to the indexed points.
    fn nearest2(&self, p: Vec3) -> f64 {
        let q = self.cell_of(p);
        let mut best = f64::INFINITY;
        let max_ring = (0..3).map(|a| q[a].max(self.dims[a] - 1 - q[a])).max().unwrap_or(0);
        for ring in 0..=max_ring {
            let lo = q.map(|c| c as isize - ring as isize);
            let hi = q.map(|c| c as isize + ring as isize);
            for i in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                for j in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    for k in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                        let on_shell = i == lo[0] || i == hi[0] || j == lo[1] || j == hi[1] || k == lo[2] || k == hi[2];
                        if !on_shell {
                            continue;
                        }
                        let f = self.flat([i as usize, j as usize, k as usize]);
                        for &idx in &self.order[self.start[f]..self.start[f + 1]] {
                            let d = math::dist2(p, self.points[idx]);
                            if d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
            // Every unvisited point lies outside the searched box.
            let mut margin = f64::INFINITY;
            for a in 0..3 {
                let box_lo = self.origin[a] + lo[a] as f64 * self.cell;
                let box_hi = self.origin[a] + (hi[a] + 1) as f64 * self.cell;
                let m = if lo[a] <= 0 && hi[a] >= self.dims[a] as isize - 1 {
                    f64::INFINITY
                } else {
                    let below = if lo[a] <= 0 { f64::INFINITY } else { p[a] - box_lo };
                    let above = if hi[a] >= self.dims[a] as isize - 1 {
                        f64::INFINITY
                    } else {
                        box_hi - p[a]
                    };
                    below.min(above)
                };
                margin = margin.min(m);
            }
            // Slack absorbs rounding between cell assignment and box bounds.
            let margin = margin * (1.0 - 1e-9) - 1e-12 * self.cell;
            if margin > 0.0 && best <= margin * margin {
                break;
            }
        }
        best
    }
}

fn directed(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> f64 {
    let grid = NearestGrid::new(b);
    let mut sum = 0.0;
    for p in a {
        let d = grid.nearest2(*p);
        sum += match mode {
            ChamferMode::Squared => d,
            ChamferMode::Unsquared => d.sqrt(),
        };
    }
    sum / a.len() as f64
}

/// Symmetric Chamfer distance `mean_a min_b d + mean_b min_a d`.
pub fn chamfer_with(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("chamfer distance of an empty cloud".into()));
    }
    Ok(directed(a, b, mode) + directed(b, a, mode))
}

pub fn chamfer(a: &PointSample, b: &PointSample) -> Result<f64> {
    chamfer_with(&a.points, &b.points, ChamferMode::Squared)
}

/// Quadratic-time Chamfer distance.
pub fn chamfer_brute_force(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        let mut sum = 0.0;
        for p in x {
            let mut best = f64::INFINITY;
            for q in y {
                let d = math::dist2(*p, *q);
                if d < best {
                    best = d;
                }
            }
            sum += match mode {
                ChamferMode::Squared => best,
                ChamferMode::Unsquared => best.sqrt(),
            };
        }
        sum / x.len() as f64
    };
    one(a, b) + one(b, a)
}

/// `matrix[g][r]` = chamfer(generated g, reference r).
pub fn chamfer_matrix(generated: &[PointSample], reference: &[PointSample]) -> Result<Vec<Vec<f64>>> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Contract("metric sets must be nonempty".into()));
    }
    generated
        .iter()
        .map(|g| reference.iter().map(|r| chamfer(g, r)).collect())
        .collect()
}

/// Mean over references of the smallest Chamfer distance to any generated cloud.
pub fn mmd_from_matrix(matrix: &[Vec<f64>]) -> f64 {
    let refs = matrix[0].len();
    let total: f64 = (0..refs)
        .map(|r| matrix.iter().map(|row| row[r]).fold(f64::INFINITY, f64::min))
        .sum();
    total / refs as f64
}

/// Fraction of references that are the nearest reference of some generated cloud.
pub fn cov_from_matrix(matrix: &[Vec<f64>]) -> f64 {
    let refs = matrix[0].len();
    let mut hit = vec![false; refs];
    for row in matrix {
        let mut best = 0;
        for r in 1..refs {
            if row[r] < row[best] {
                best = r;
            }
        }
        hit[best] = true;
    }
    hit.iter().filter(|h| **h).count() as f64 / refs as f64
}

pub fn mmd(generated: &[PointSample], reference: &[PointSample]) -> Result<f64> {
    Ok(mmd_from_matrix(&chamfer_matrix(generated, reference)?))
}

/// MMD in per-mille units.
pub fn mmd_permille(generated: &[PointSample], reference: &[PointSample]) -> Result<f64> {
    Ok(1000.0 * mmd(generated, reference)?)
}

pub fn cov(generated: &[PointSample], reference: &[PointSample]) -> Result<f64> {
    Ok(cov_from_matrix(&chamfer_matrix(generated, reference)?))
}

/// `|generated ∩ conditioning| / |conditioning|`; with `dilate` the generated
/// grid first grows by one voxel.
pub fn partial_recall(generated: &VoxelGrid, conditioning: &VoxelGrid, dilate: bool) -> Result<f64> {
    if conditioning.is_empty() {
        return Err(Error::Undefined("recall of an empty conditioning grid".into()));
    }
    let hit = if dilate {
        generated.dilate().intersection_count(conditioning)?
    } else {
        generated.intersection_count(conditioning)?
    };
    Ok(hit as f64 / conditioning.count() as f64)
}
