use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Indexed triangle mesh with precomputed edge adjacency and face areas.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    adjacency: Vec<Vec<usize>>,
    areas: Vec<f64>,
    edge_use: HashMap<(usize, usize), usize>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriMesh {
    /// Validates indices and face areas, then builds adjacency.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Mesh("mesh has no faces".into()));
        }
        if let Some(v) = vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Mesh(format!("non-finite vertex {v:?}")));
        }
        let mut areas = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&i) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Mesh(format!(
                    "face {fi} references vertex {i} of {}",
                    vertices.len()
                )));
            }
            let [a, b, c] = f.map(|i| vertices[i]);
            let area = 0.5 * math::norm(math::cross(math::sub(b, a), math::sub(c, a)));
            if !(area > 0.0) {
                return Err(Error::Mesh(format!("face {fi} is degenerate")));
            }
            areas.push(area);
        }

        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for e in 0..3 {
                edge_faces.entry(edge_key(f[e], f[(e + 1) % 3])).or_default().push(fi);
            }
        }
        let mut adjacency = vec![Vec::new(); faces.len()];
        for list in edge_faces.values() {
            for &a in list {
                for &b in list {
                    if a != b {
                        adjacency[a].push(b);
                    }
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let edge_use = edge_faces.into_iter().map(|(k, v)| (k, v.len())).collect();
        Ok(Self {
            vertices,
            faces,
            adjacency,
            areas,
            edge_use,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Faces sharing an edge with `face`, ascending.
    pub fn neighbors(&self, face: usize) -> &[usize] {
        &self.adjacency[face]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        self.areas[face]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    /// Every undirected edge bounds exactly two faces.
    pub fn is_watertight(&self) -> bool {
        self.edge_use.values().all(|&n| n == 2)
    }

    pub fn check_watertight(&self) -> Result<()> {
        match self.edge_use.iter().filter(|(_, &n)| n != 2).min() {
            None => Ok(()),
            Some((e, n)) => Err(Error::Mesh(format!("edge {e:?} is shared by {n} faces"))),
        }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        math::bounds(&self.vertices).expect("validated mesh has vertices")
    }

    /// Centres the bounding box at the origin and scales the longest edge to `extent`.
    pub fn normalized(&self, extent: f64) -> Self {
        let (lo, hi) = self.bounds();
        let center = math::scale(math::add(lo, hi), 0.5);
        let longest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let s = extent / longest;
        let vertices = self
            .vertices
            .iter()
            .map(|&v| math::scale(math::sub(v, center), s))
            .collect();
        let areas = self.areas.iter().map(|a| a * s * s).collect();
        Self {
            vertices,
            faces: self.faces.clone(),
            adjacency: self.adjacency.clone(),
            areas,
            edge_use: self.edge_use.clone(),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap();
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    /// Parses `v` and `f` records; polygons are fan-triangulated and
    /// `f a/b/c` index forms keep only the position index.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
                    if c.len() != 3 {
                        return Err(Error::Format(format!("line {}: short vertex", ln + 1)));
                    }
                    vertices.push([c[0], c[1], c[2]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            head.parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| Error::Format(format!("line {}: bad index {s}", ln + 1)))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(Error::Format(format!("line {}: short face", ln + 1)));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text)
    }
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron() -> TriMesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|&v| math::normalize(v).unwrap()).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::new(vertices, faces).expect("static icosahedron")
}

/// Axis-aligned box with the given half extents, 12 outward-wound triangles.
pub fn box_mesh(half: Vec3) -> TriMesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
        vertices.push([s(0) * half[0], s(1) * half[1], s(2) * half[2]]);
    }
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriMesh::new(vertices, faces).expect("static box")
}

/// Unit cube `[-0.5, 0.5]³`.
pub fn unit_cube() -> TriMesh {
    box_mesh([0.5; 3])
}

/// Closed cube surface split into `n × n` quads per side; points lie on `[-1,1]³`.
fn subdivided_cube(n: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    assert!(n >= 1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |key: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(key).or_insert_with(|| {
            vertices.push(key.map(|k| 2.0 * k as f64 / n as f64 - 1.0));
            vertices.len() - 1
        })
    };
    // Each side: fixed axis `a` at level 0 or n, grid over the other two.
    for a in 0..3 {
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        for level in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut k = [0; 3];
                        k[a] = level;
                        k[u] = i + di;
                        k[v] = j + dj;
                        k
                    };
                    let q = [
                        vid(corner(0, 0), &mut vertices),
                        vid(corner(1, 0), &mut vertices),
                        vid(corner(1, 1), &mut vertices),
                        vid(corner(0, 1), &mut vertices),
                    ];
                    // (u, v, a) is right-handed, so this winding faces +a.
                    if level == n {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    (vertices, faces)
}

fn signed_pow(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

/// Superquadric surface with semi-axes `radii` and shape exponents
/// (`e1` along the z profile, `e2` around z), meshed from a subdivided cube.
pub fn superquadric(radii: Vec3, e1: f64, e2: f64, subdivisions: usize) -> Result<TriMesh> {
    if !(e1 > 0.0 && e2 > 0.0) {
        return Err(Error::Mesh("superquadric exponents must be positive".into()));
    }
    let (cube, faces) = subdivided_cube(subdivisions);
    let vertices = cube
        .into_iter()
        .map(|p| {
            let d = math::normalize(p).expect("cube surface point is nonzero");
            let eta = d[2].clamp(-1.0, 1.0).asin();
            let omega = d[1].atan2(d[0]);
            let ce = signed_pow(eta.cos(), e1);
            [
                radii[0] * ce * signed_pow(omega.cos(), e2),
                radii[1] * ce * signed_pow(omega.sin(), e2),
                radii[2] * signed_pow(eta.sin(), e1),
            ]
        })
        .collect();
    TriMesh::new(vertices, faces)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Box,
    Cylinder,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Sphere, ShapeClass::Box, ShapeClass::Cylinder];

    pub fn exponents(self) -> (f64, f64) {
        match self {
            ShapeClass::Sphere => (1.0, 1.0),
            ShapeClass::Box => (0.25, 0.25),
            ShapeClass::Cylinder => (0.25, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Cylinder => "cylinder",
        }
    }
}

/// One procedural shape of the given class with per-axis radii jittered by
/// up to `±jitter` (relative), normalized so its longest extent is 1.
pub fn procedural_shape<R: Rng + ?Sized>(
    class: ShapeClass,
    jitter: f64,
    subdivisions: usize,
    rng: &mut R,
) -> Result<TriMesh> {
    let (e1, e2) = class.exponents();
    let mut radii = [1.0; 3];
    for r in &mut radii {
        *r += jitter * rng.gen_range(-1.0..=1.0);
    }
    if class == ShapeClass::Cylinder {
        radii[1] = radii[0];
    }
    Ok(superquadric(radii, e1, e2, subdivisions)?.normalized(1.0))
}
