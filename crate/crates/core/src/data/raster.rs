use super::camera::PinholeCamera;
use super::mesh::TriMesh;
use super::occlusion::OcclusionLabeling;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Mask};

/// Triangles with a vertex closer than this view depth are not drawn.
pub const NEAR_PLANE: f64 = 1e-3;

const NO_FACE: u32 = u32::MAX;

/// Depth and nearest-face buffers for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Render {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    face: Vec<u32>,
}

impl Render {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// View-space depth, `+inf` where nothing was drawn.
    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    pub fn face(&self, row: usize, col: usize) -> Option<usize> {
        let f = self.face[row * self.width + col];
        (f != NO_FACE).then_some(f as usize)
    }

    pub fn silhouette(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |r, c| self.face(r, c).is_some())
    }

    pub fn depth_map(&self) -> DepthMap {
        let mut d = DepthMap::new(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let z = self.depth(r, c);
                if z.is_finite() {
                    d.set(r, c, z as f32);
                }
            }
        }
        d
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Edge function evaluated in a canonical vertex order, so the two triangles
/// sharing an edge get exactly negated values and no pixel falls in a crack.
#[inline]
fn edge_exact(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        edge(a, b, p)
    } else {
        -edge(b, a, p)
    }
}

/// Top or left edge for a triangle whose interior has positive edge values,
/// with rows growing downward.
#[inline]
fn top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Depth of `face` at the centre of `(row, col)` if the pixel is covered,
/// using the same coverage and interpolation rules as [`render`].
pub fn face_depth_at(mesh: &TriMesh, camera: &PinholeCamera, face: usize, row: usize, col: usize) -> Option<f64> {
    let basis = camera.basis();
    let tri = mesh
        .triangle(face)
        .map(|p| camera.project_view(camera.to_view(&basis, p)));
    if tri.iter().any(|p| p.depth <= NEAR_PLANE) {
        return None;
    }
    let mut s = tri.map(|p| [p.col, p.row]);
    let mut z = tri.map(|p| p.depth);
    let mut area = edge(s[0], s[1], s[2]);
    if area == 0.0 {
        return None;
    }
    if area < 0.0 {
        s.swap(1, 2);
        z.swap(1, 2);
        area = -area;
    }
    covered_depth(&s, &z, area, [col as f64 + 0.5, row as f64 + 0.5])
}

#[inline]
fn covered_depth(s: &[[f64; 2]; 3], z: &[f64; 3], area: f64, p: [f64; 2]) -> Option<f64> {
    let w = [
        edge_exact(s[1], s[2], p),
        edge_exact(s[2], s[0], p),
        edge_exact(s[0], s[1], p),
    ];
    let pairs = [(1, 2), (2, 0), (0, 1)];
    for (i, &(a, b)) in pairs.iter().enumerate() {
        if w[i] < 0.0 || (w[i] == 0.0 && !top_left(s[a], s[b])) {
            return None;
        }
    }
    // Perspective-correct: interpolate 1/z with screen-space barycentrics.
    let inv_z = (w[0] / z[0] + w[1] / z[1] + w[2] / z[2]) / area;
    Some(1.0 / inv_z)
}

/// Z-buffered rasterization with the top-left fill rule and no culling.
/// Ties in depth keep the earlier face.
pub fn render(mesh: &TriMesh, camera: &PinholeCamera) -> Result<Render> {
    let basis = camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut out = Render {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; w * h],
        face: vec![NO_FACE; w * h],
    };
    for fi in 0..mesh.face_count() {
        let tri = mesh
            .triangle(fi)
            .map(|p| camera.project_view(camera.to_view(&basis, p)));
        if tri.iter().any(|p| p.depth <= NEAR_PLANE) {
            continue;
        }
        let mut s = tri.map(|p| [p.col, p.row]);
        let mut z = tri.map(|p| p.depth);
        let mut area = edge(s[0], s[1], s[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            s.swap(1, 2);
            z.swap(1, 2);
            area = -area;
        }
        let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        // Pixel centres c + 0.5 inside [min, max].
        let c0 = (min_x - 0.5).ceil().max(0.0);
        let c1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let r0 = (min_y - 0.5).ceil().max(0.0);
        let r1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        for r in r0 as usize..=r1 as usize {
            for c in c0 as usize..=c1 as usize {
                let p = [c as f64 + 0.5, r as f64 + 0.5];
                if let Some(d) = covered_depth(&s, &z, area, p) {
                    let i = r * w + c;
                    if d < out.depth[i] {
                        out.depth[i] = d;
                        out.face[i] = fi as u32;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One rendered view split by the 3D occlusion labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterView {
    /// Pixels whose nearest face is not labeled occluded.
    pub m_3dvis: Mask,
    /// Pixels whose nearest face is labeled occluded.
    pub m_3docc: Mask,
    pub render: Render,
}

pub fn rasterize(mesh: &TriMesh, labeling: &OcclusionLabeling, camera: &PinholeCamera) -> Result<RasterView> {
    let render = render(mesh, camera)?;
    let occluded = labeling.mask(mesh.face_count());
    let (w, h) = (camera.width, camera.height);
    let m_3docc = Mask::from_fn(w, h, |r, c| render.face(r, c).is_some_and(|f| occluded[f]));
    let m_3dvis = Mask::from_fn(w, h, |r, c| render.face(r, c).is_some_and(|f| !occluded[f]));
    Ok(RasterView {
        m_3dvis,
        m_3docc,
        render,
    })
}

/// `|occ| / (|occ| + |vis|)`.
pub fn occlusion_rate(m_3dvis: &Mask, m_3docc: &Mask) -> Result<f64> {
    let (v, o) = (m_3dvis.count(), m_3docc.count());
    if v + o == 0 {
        return Err(Error::Undefined("occlusion rate of an empty silhouette".into()));
    }
    Ok(o as f64 / (v + o) as f64)
}

/// Indices of views whose rate is defined and lies in `[lo, hi]`.
pub fn filter_views(rates: &[Result<f64>], lo: f64, hi: f64) -> Vec<usize> {
    rates
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Ok(x) if (lo..=hi).contains(x)))
        .map(|(i, _)| i)
        .collect()
}
