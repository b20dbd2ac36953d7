use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use crate::error::{Error, Result};

pub const MIN_COVERAGE: f64 = 0.2;
pub const MAX_COVERAGE: f64 = 0.6;

/// Connected set of faces treated as hidden behind an occluder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionLabeling {
    pub seed: usize,
    pub occluded_faces: BTreeSet<usize>,
    pub target_coverage: f64,
    pub achieved_coverage: f64,
    /// Growth ran out of reachable faces before meeting the target.
    pub exhausted: bool,
}

impl OcclusionLabeling {
    pub fn empty() -> Self {
        Self {
            seed: 0,
            occluded_faces: BTreeSet::new(),
            target_coverage: 0.0,
            achieved_coverage: 0.0,
            exhausted: false,
        }
    }

    pub fn all(mesh: &TriMesh) -> Self {
        Self {
            seed: 0,
            occluded_faces: (0..mesh.face_count()).collect(),
            target_coverage: 1.0,
            achieved_coverage: 1.0,
            exhausted: false,
        }
    }

    pub fn contains(&self, face: usize) -> bool {
        self.occluded_faces.contains(&face)
    }

    /// Per-face membership flags.
    pub fn mask(&self, face_count: usize) -> Vec<bool> {
        let mut m = vec![false; face_count];
        for &f in &self.occluded_faces {
            m[f] = true;
        }
        m
    }
}

/// Randomized frontier growth from `seed` over edge adjacency until the
/// labeled area fraction reaches `target_coverage`.
///
/// The frontier is a set of unlabeled faces adjacent to the region; each
/// step labels one uniformly chosen frontier face.
pub fn grow_occlusion<R: Rng + ?Sized>(
    mesh: &TriMesh,
    seed: usize,
    target_coverage: f64,
    rng: &mut R,
) -> Result<OcclusionLabeling> {
    if seed >= mesh.face_count() {
        return Err(Error::Contract(format!(
            "seed face {seed} out of range ({} faces)",
            mesh.face_count()
        )));
    }
    if !(target_coverage > 0.0) {
        return Err(Error::Contract(format!(
            "target coverage must be positive, got {target_coverage}"
        )));
    }
    let total = mesh.total_area();
    let mut labeled = vec![false; mesh.face_count()];
    let mut in_frontier = vec![false; mesh.face_count()];
    let mut frontier = vec![seed];
    in_frontier[seed] = true;
    let mut faces = BTreeSet::new();
    let mut area = 0.0;
    // Relative slack so exact fractions such as 4/20 are not missed by rounding.
    let goal = target_coverage * total * (1.0 - 1e-9);

    while !frontier.is_empty() {
        let pick = rng.gen_range(0..frontier.len());
        let f = frontier.swap_remove(pick);
        labeled[f] = true;
        faces.insert(f);
        area += mesh.face_area(f);
        if area >= goal {
            break;
        }
        for &n in mesh.neighbors(f) {
            if !labeled[n] && !in_frontier[n] {
                in_frontier[n] = true;
                frontier.push(n);
            }
        }
    }
    let achieved = (area / total).min(1.0);
    Ok(OcclusionLabeling {
        seed,
        occluded_faces: faces,
        target_coverage,
        achieved_coverage: achieved,
        exhausted: area < goal,
    })
}

/// Whether every labeled face is reachable from the seed through labeled faces.
pub fn is_connected(mesh: &TriMesh, labeling: &OcclusionLabeling) -> bool {
    if labeling.occluded_faces.is_empty() {
        return true;
    }
    if !labeling.contains(labeling.seed) {
        return false;
    }
    let mut seen = BTreeSet::from([labeling.seed]);
    let mut stack = vec![labeling.seed];
    while let Some(f) = stack.pop() {
        for &n in mesh.neighbors(f) {
            if labeling.contains(n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == labeling.occluded_faces.len()
}
