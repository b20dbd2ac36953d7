use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::math::{self, Vec3};

/// Multi-view point cloud; every point remembers the view and pixel it came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StereoCloud {
    pub points: Vec<Vec3>,
    pub source_view: Vec<usize>,
    /// `(row, col)` in the source view.
    pub pixel: Vec<(usize, usize)>,
}

impl StereoCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, view: usize, pixel: (usize, usize)) {
        self.points.push(p);
        self.source_view.push(view);
        self.pixel.push(pixel);
    }

    pub fn extend(&mut self, other: StereoCloud) {
        self.points.extend(other.points);
        self.source_view.extend(other.source_view);
        self.pixel.extend(other.pixel);
    }
}

/// Object points with the transform that maps them back to world units:
/// `world = points / scale + center`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialObjectCloud {
    pub points: Vec<Vec3>,
    pub center: Vec3,
    pub scale: f64,
}

impl PartialObjectCloud {
    /// Points already expressed in the target frame.
    pub fn identity(points: Vec<Vec3>) -> Self {
        Self {
            points,
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        math::add(math::scale(p, 1.0 / self.scale), self.center)
    }
}

/// Points whose provenance pixel is set in the mask of their source view.
pub fn extract_visible_points(cloud: &StereoCloud, masks: &[Mask]) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let view = cloud.source_view[i];
        let mask = masks
            .get(view)
            .ok_or_else(|| Error::Contract(format!("point {i} refers to view {view} without a mask")))?;
        let (r, c) = cloud.pixel[i];
        if r >= mask.height() || c >= mask.width() {
            return Err(Error::Contract(format!(
                "pixel ({r}, {c}) outside {}×{} mask of view {view}",
                mask.width(),
                mask.height()
            )));
        }
        if mask.get(r, c) {
            out.push(cloud.points[i]);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyObject);
    }
    Ok(out)
}

/// Centres the bounding box at the origin and scales the longest edge to 1.
/// A zero-extent cloud keeps scale 1.
pub fn normalize_cloud(points: &[Vec3]) -> Result<PartialObjectCloud> {
    let (lo, hi) = math::bounds(points).ok_or(Error::EmptyObject)?;
    let center = math::scale(math::add(lo, hi), 0.5);
    let longest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let scale = if longest > 0.0 { 1.0 / longest } else { 1.0 };
    let points = points
        .iter()
        .map(|&p| {
            let mut q = math::scale(math::sub(p, center), scale);
            // Rounding in the subtraction can land a hair outside the box.
            for v in &mut q {
                *v = v.clamp(-0.5, 0.5);
            }
            q
        })
        .collect();
    Ok(PartialObjectCloud { points, center, scale })
}

/// Uniform grid for fixed-radius neighbor queries. Cells are stored densely
/// over the bounding box when that is small enough, in a hash map otherwise.
pub struct SpatialHash<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: Cells,
}

enum Cells {
    /// Point indices grouped by cell, `start[c]..start[c + 1]` in `members`.
    Dense {
        lo: [i64; 3],
        dims: [i64; 3],
        start: Vec<u32>,
        members: Vec<u32>,
    },
    Sparse(HashMap<[i64; 3], Vec<usize>>),
}

const MAX_DENSE_CELLS: i64 = 1 << 23;

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let keys: Vec<[i64; 3]> = points.iter().map(|&p| Self::key(p, cell)).collect();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for k in &keys {
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        let dims = [0, 1, 2].map(|a| hi[a].saturating_sub(lo[a]).saturating_add(1));
        let total = dims.iter().try_fold(1i64, |acc, &d| acc.checked_mul(d));
        let cells = match total {
            Some(total) if !keys.is_empty() && total <= MAX_DENSE_CELLS && points.len() < u32::MAX as usize => {
                let flat =
                    |k: &[i64; 3]| (((k[0] - lo[0]) * dims[1] + (k[1] - lo[1])) * dims[2] + (k[2] - lo[2])) as usize;
                let mut start = vec![0u32; total as usize + 1];
                for k in &keys {
                    start[flat(k) + 1] += 1;
                }
                for c in 0..total as usize {
                    start[c + 1] += start[c];
                }
                let mut fill = start.clone();
                let mut members = vec![0u32; keys.len()];
                for (i, k) in keys.iter().enumerate() {
                    let c = flat(k);
                    members[fill[c] as usize] = i as u32;
                    fill[c] += 1;
                }
                Cells::Dense {
                    lo,
                    dims,
                    start,
                    members,
                }
            }
            _ => {
                let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
                for (i, k) in keys.into_iter().enumerate() {
                    buckets.entry(k).or_default().push(i);
                }
                Cells::Sparse(buckets)
            }
        };
        Self { points, cell, cells }
    }

    fn key(p: Vec3, cell: f64) -> [i64; 3] {
        p.map(|v| (v / cell).floor() as i64)
    }

    /// Calls `f` with each point index stored in cell `k` until it returns false.
    fn visit(&self, k: [i64; 3], mut f: impl FnMut(usize) -> bool) -> bool {
        match &self.cells {
            Cells::Dense {
                lo,
                dims,
                start,
                members,
            } => {
                let mut flat = 0i64;
                for a in 0..3 {
                    let o = k[a] - lo[a];
                    if o < 0 || o >= dims[a] {
                        return true;
                    }
                    flat = flat * dims[a] + o;
                }
                let c = flat as usize;
                members[start[c] as usize..start[c + 1] as usize]
                    .iter()
                    .all(|&j| f(j as usize))
            }
            Cells::Sparse(buckets) => buckets.get(&k).map_or(true, |list| list.iter().all(|&j| f(j))),
        }
    }

    /// Number of points (including any copy of `p` itself) within `radius` of `p`.
    /// `radius` must not exceed the cell size.
    pub fn count_within(&self, p: Vec3, radius: f64) -> usize {
        self.count_capped(p, radius, usize::MAX)
    }

    /// Whether at least `n` points lie within `radius` of `p`.
    pub fn has_at_least(&self, p: Vec3, radius: f64, n: usize) -> bool {
        n == 0 || self.count_capped(p, radius, n) >= n
    }

    /// Counts up to `cap`, visiting the home cell first.
    fn count_capped(&self, p: Vec3, radius: f64, cap: usize) -> usize {
        debug_assert!(radius <= self.cell);
        const ORDER: [i64; 3] = [0, -1, 1];
        let r2 = radius * radius;
        let k = Self::key(p, self.cell);
        let mut n = 0;
        for dx in ORDER {
            for dy in ORDER {
                for dz in ORDER {
                    let more = self.visit([k[0] + dx, k[1] + dy, k[2] + dz], |j| {
                        if math::dist2(self.points[j], p) <= r2 {
                            n += 1;
                        }
                        n < cap
                    });
                    if !more {
                        return n;
                    }
                }
            }
        }
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierFilter {
    pub radius: f64,
    pub min_neighbors: usize,
    /// Count the query point toward `min_neighbors`.
    pub count_self: bool,
}

impl Default for OutlierFilter {
    fn default() -> Self {
        Self {
            radius: 1.0 / 64.0,
            min_neighbors: 5,
            count_self: true,
        }
    }
}

/// Keeps points with enough neighbors inside the radius ball.
pub fn filter_outliers(points: &[Vec3], cfg: &OutlierFilter) -> Vec<Vec3> {
    if points.is_empty() {
        return Vec::new();
    }
    let grid = SpatialHash::new(points, cfg.radius);
    let need = if cfg.count_self {
        cfg.min_neighbors
    } else {
        cfg.min_neighbors + 1
    };
    points
        .iter()
        .copied()
        .filter(|&p| grid.has_at_least(p, cfg.radius, need))
        .collect()
}
