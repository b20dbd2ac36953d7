use std::fmt::Write as _;
use std::path::Path;

use crate::data::mesh::TriMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const GRID_RESOLUTION: usize = 64;
pub const VOXEL_MAGIC: &[u8; 4] = b"VOX6";

/// Slack for coordinates that are nominally on the `[-0.5, 0.5]` boundary.
const RANGE_SLACK: f64 = 1e-9;

/// Binary occupancy over `[-0.5, 0.5]³` at `resolution` cells per axis.
/// Cell `(i, j, k)` is stored at `(i·φ + j)·φ + k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    resolution: usize,
    bits: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(resolution: usize) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        Self {
            resolution,
            bits: vec![false; resolution.pow(3)],
        }
    }

    pub fn full(resolution: usize) -> Self {
        Self {
            resolution,
            bits: vec![true; resolution.pow(3)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        self.bits[idx] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Active cells in ascending index order.
    pub fn active(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let n = self.resolution;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(idx, _)| [idx / (n * n), idx / n % n, idx % n])
    }

    pub fn from_active(resolution: usize, cells: impl IntoIterator<Item = [usize; 3]>) -> Result<Self> {
        let mut g = Self::new(resolution);
        for c in cells {
            if c.iter().any(|&v| v >= resolution) {
                return Err(Error::Contract(format!("voxel {c:?} outside resolution {resolution}")));
            }
            g.set(c[0], c[1], c[2], true);
        }
        Ok(g)
    }

    /// Centre of a cell in normalized coordinates.
    pub fn center(&self, cell: [usize; 3]) -> Vec3 {
        cell.map(|i| (i as f64 + 0.5) / self.resolution as f64 - 0.5)
    }

    fn check_same(&self, other: &VoxelGrid) -> Result<()> {
        if self.resolution != other.resolution {
            return Err(Error::Contract(format!(
                "resolution {} differs from {}",
                self.resolution, other.resolution
            )));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &VoxelGrid) -> Result<usize> {
        self.check_same(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    pub fn union(&self, other: &VoxelGrid) -> Result<VoxelGrid> {
        self.check_same(other)?;
        Ok(VoxelGrid {
            resolution: self.resolution,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Adds every cell within Chebyshev distance 1 of an active cell.
    pub fn dilate(&self) -> VoxelGrid {
        let n = self.resolution as isize;
        let mut out = self.clone();
        for [i, j, k] in self.active().collect::<Vec<_>>() {
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    for dk in -1..=1isize {
                        let (a, b, c) = (i as isize + di, j as isize + dj, k as isize + dk);
                        if (0..n).contains(&a) && (0..n).contains(&b) && (0..n).contains(&c) {
                            out.set(a as usize, b as usize, c as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Mean occupancy of each `factor³` block.
    pub fn average_pool(&self, factor: usize) -> Result<Vec<f64>> {
        let n = self.resolution;
        if factor == 0 || n % factor != 0 {
            return Err(Error::Contract(format!(
                "pool factor {factor} does not divide resolution {n}"
            )));
        }
        let m = n / factor;
        let mut out = vec![0.0; m * m * m];
        for [i, j, k] in self.active() {
            out[((i / factor) * m + j / factor) * m + k / factor] += 1.0;
        }
        let inv = 1.0 / (factor * factor * factor) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }

    /// Block becomes active if any of its cells is.
    pub fn any_pool(&self, factor: usize) -> Result<VoxelGrid> {
        let avg = self.average_pool(factor)?;
        Ok(VoxelGrid {
            resolution: self.resolution / factor,
            bits: avg.iter().map(|&v| v > 0.0).collect(),
        })
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> VoxelGrid {
        let mut out = VoxelGrid::new(self.resolution * factor);
        let n = out.resolution;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.get(i / factor, j / factor, k / factor) {
                        out.set(i, j, k, true);
                    }
                }
            }
        }
        out
    }

    pub fn iou(&self, other: &VoxelGrid) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let union = self.count() + other.count() - inter;
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for [i, j, k] in self.active() {
            writeln!(s, "{i} {j} {k}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str, resolution: usize) -> Result<Self> {
        let mut cells = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
            if v.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 indices", ln + 1)));
            }
            cells.push([v[0], v[1], v[2]]);
        }
        Self::from_active(resolution, cells)
    }

    /// `VOX6` magic then 64³ bits, least significant bit first.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.resolution != GRID_RESOLUTION {
            return Err(Error::Contract(format!(
                "binary voxel format requires resolution {GRID_RESOLUTION}"
            )));
        }
        let mut out = Vec::with_capacity(4 + self.bits.len() / 8);
        out.extend_from_slice(VOXEL_MAGIC);
        for chunk in self.bits.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i));
            out.push(byte);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let n = GRID_RESOLUTION.pow(3);
        if bytes.len() < 4 || &bytes[..4] != VOXEL_MAGIC {
            return Err(Error::Format("bad voxel magic".into()));
        }
        if bytes.len() != 4 + n / 8 {
            return Err(Error::Format(format!(
                "voxel payload is {} bytes, expected {}",
                bytes.len() - 4,
                n / 8
            )));
        }
        let bits = (0..n).map(|i| bytes[4 + i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self {
            resolution: GRID_RESOLUTION,
            bits,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Cell index along one axis.
#[inline]
pub fn voxel_coord(x: f64, phi: usize) -> usize {
    (((x + 0.5) * phi as f64).floor().max(0.0) as usize).min(phi - 1)
}

/// Marks the cell containing each point. Coordinates must lie in `[-0.5, 0.5]`.
pub fn voxelize(points: &[Vec3], phi: usize) -> Result<VoxelGrid> {
    let mut g = VoxelGrid::new(phi);
    for p in points {
        if p.iter().any(|v| !(v.abs() <= 0.5 + RANGE_SLACK)) {
            return Err(Error::Contract(format!(
                "point {p:?} outside [-0.5, 0.5]³; normalize first"
            )));
        }
        g.set(
            voxel_coord(p[0], phi),
            voxel_coord(p[1], phi),
            voxel_coord(p[2], phi),
            true,
        );
    }
    Ok(g)
}

/// Like [`voxelize`] but clamps stray points into the cube instead of failing.
pub fn voxelize_clamped(points: &[Vec3], phi: usize) -> VoxelGrid {
    let mut g = VoxelGrid::new(phi);
    for p in points {
        if p.iter().all(|v| v.is_finite()) {
            g.set(
                voxel_coord(p[0], phi),
                voxel_coord(p[1], phi),
                voxel_coord(p[2], phi),
                true,
            );
        }
    }
    g
}

/// Solid occupancy of a closed mesh: a cell is active when its centre is
/// inside (crossing parity along +z) or a surface sample falls in it.
pub fn voxelize_solid(mesh: &TriMesh, phi: usize) -> VoxelGrid {
    let mut g = VoxelGrid::new(phi);
    let n = phi as f64;
    // Off-lattice nudge keeps rays away from shared edges and vertices.
    let (ox, oy) = (1.234_567e-7, 7.654_321e-8);
    let tris: Vec<[Vec3; 3]> = (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect();
    for i in 0..phi {
        let x = (i as f64 + 0.5) / n - 0.5 + ox;
        for j in 0..phi {
            let y = (j as f64 + 0.5) / n - 0.5 + oy;
            let mut hits: Vec<f64> = tris.iter().filter_map(|t| ray_z_hit(t, x, y)).collect();
            if hits.len() < 2 {
                continue;
            }
            hits.sort_by(f64::total_cmp);
            for k in 0..phi {
                let z = (k as f64 + 0.5) / n - 0.5;
                let below = hits.partition_point(|&h| h < z);
                if below % 2 == 1 {
                    g.set(i, j, k, true);
                }
            }
        }
    }
    // Thin parts can fall between cell centres; mark cells that hold surface.
    for t in &tris {
        let longest = (0..3)
            .map(|e| crate::math::norm(crate::math::sub(t[e], t[(e + 1) % 3])))
            .fold(0.0, f64::max);
        // Sample spacing below half a cell.
        let steps = (longest * n * 2.0).ceil() as usize + 1;
        for a in 0..=steps {
            for b in 0..=steps - a {
                let (u, v) = (a as f64 / steps as f64, b as f64 / steps as f64);
                let w = 1.0 - u - v;
                let p: Vec3 = std::array::from_fn(|d| w * t[0][d] + u * t[1][d] + v * t[2][d]);
                if p.iter().all(|c| c.abs() <= 0.5 + RANGE_SLACK) {
                    g.set(
                        voxel_coord(p[0], phi),
                        voxel_coord(p[1], phi),
                        voxel_coord(p[2], phi),
                        true,
                    );
                }
            }
        }
    }
    g
}

/// `z` where the vertical line through `(x, y)` crosses the triangle.
fn ray_z_hit(t: &[Vec3; 3], x: f64, y: f64) -> Option<f64> {
    let (a, b, c) = (t[0], t[1], t[2]);
    let d = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if d == 0.0 {
        return None;
    }
    let l0 = ((b[1] - c[1]) * (x - c[0]) + (c[0] - b[0]) * (y - c[1])) / d;
    let l1 = ((c[1] - a[1]) * (x - c[0]) + (a[0] - c[0]) * (y - c[1])) / d;
    let l2 = 1.0 - l0 - l1;
    (l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0).then(|| l0 * a[2] + l1 * b[2] + l2 * c[2])
}
