use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::camera::{sample_cameras, CameraSampling, PinholeCamera};
use super::features::toy_view_encoder;
use super::mesh::{procedural_shape, ShapeClass, TriMesh};
use super::morph::{synth_occlusion_mask, OcclusionMaskConfig};
use super::occlusion::grow_occlusion;
use super::raster::{occlusion_rate, rasterize};
use crate::error::{Error, Result};
use crate::geometry::{
    back_project_depth, voxelize_solid, StereoCloud, VoxelGrid, DEFAULT_NOISE_SIGMA, GRID_RESOLUTION,
};
use crate::image::{DepthMap, Mask};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub meshes: usize,
    pub views_per_mesh: usize,
    pub camera: CameraSampling,
    pub coverage: (f64, f64),
    pub rate_limits: (f64, f64),
    pub mask: OcclusionMaskConfig,
    /// Probability that a pixel inside the occluder mask is corrupted in the
    /// simulated completed view.
    pub corruption: f64,
    pub noise_sigma: f64,
    pub shape_jitter: f64,
    pub subdivisions: usize,
    /// Trailing fraction of objects held out for evaluation.
    pub test_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            meshes: 5,
            views_per_mesh: 20,
            camera: CameraSampling::default(),
            coverage: (0.2, 0.6),
            rate_limits: (0.2, 0.6),
            mask: OcclusionMaskConfig::default(),
            corruption: 0.3,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            shape_jitter: 0.25,
            subdivisions: 12,
            test_fraction: 0.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.coverage;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::Contract(format!("bad coverage range ({lo}, {hi})")));
        }
        if self.views_per_mesh == 0 {
            return Err(Error::Contract("views_per_mesh must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(Error::Contract("corruption must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Contract("test_fraction must lie in [0, 1)".into()));
        }
        if self.noise_sigma < 0.0 || self.subdivisions == 0 {
            return Err(Error::Contract("noise_sigma and subdivisions must be valid".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub camera: usize,
    pub m_v: String,
    pub m_o: String,
    pub depth: String,
    pub features: String,
    pub rate: f64,
    pub visible_px: usize,
    pub occluder_px: usize,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingEntry {
    pub seed_face: usize,
    pub target_coverage: f64,
    pub achieved_coverage: f64,
    pub faces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub id: String,
    pub class: Option<ShapeClass>,
    pub split: Split,
    pub mesh: String,
    pub seed: u64,
    /// Longest bounding-box edge; scales the stereo noise.
    pub extent: f64,
    pub target: String,
    pub labeling: LabelingEntry,
    pub cameras: Vec<PinholeCamera>,
    pub views: Vec<ViewEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub objects: Vec<ObjectEntry>,
    pub skipped: Vec<String>,
}

impl Manifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(self).expect("manifest serializes");
        b.push(b'\n');
        b
    }

    /// Hex SHA-256 of the serialized manifest.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self::load_hashed(dir)?.0)
    }

    /// Loads the manifest together with the hex SHA-256 of its bytes on disk.
    pub fn load_hashed(dir: &Path) -> Result<(Self, String)> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Mismatch(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok((m, hex::encode(Sha256::digest(&bytes))))
    }
}

/// A mesh handed to the corpus builder.
#[derive(Clone, Debug)]
pub struct MeshSource {
    pub id: String,
    pub class: Option<ShapeClass>,
    pub mesh: TriMesh,
}

/// Independent stream per object: `(seed, index)`.
pub fn object_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Procedural meshes cycling through the shape classes.
pub fn procedural_meshes(count: usize, cfg: &CorpusConfig, seed: u64) -> Result<Vec<MeshSource>> {
    (0..count)
        .map(|i| {
            let class = ShapeClass::ALL[i % ShapeClass::ALL.len()];
            // Shape streams sit above the per-object streams used by the builder.
            let mut rng = object_rng(seed, (1 << 32) + i as u64);
            Ok(MeshSource {
                id: format!("obj{i:04}"),
                class: Some(class),
                mesh: procedural_shape(class, cfg.shape_jitter, cfg.subdivisions, &mut rng)?,
            })
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders, filters and encodes every mesh and writes the corpus plus
/// `manifest.json` under `out_dir`. Meshes that are not watertight are
/// listed in `skipped`.
pub fn build_corpus(meshes: &[MeshSource], cfg: &CorpusConfig, seed: u64, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_test = (meshes.len() as f64 * cfg.test_fraction).round() as usize;
    let mut objects = Vec::new();
    let mut skipped = Vec::new();
    for (idx, src) in meshes.iter().enumerate() {
        if let Err(e) = src.mesh.check_watertight() {
            skipped.push(format!("{}: {e}", src.id));
            continue;
        }
        let split = if idx >= meshes.len() - n_test {
            Split::Test
        } else {
            Split::Train
        };
        objects.push(build_object(src, idx as u64, split, cfg, seed, out_dir)?);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        config: cfg.clone(),
        objects,
        skipped,
    };
    write_file(&out_dir.join(MANIFEST_FILE), &manifest.to_bytes())?;
    Ok(manifest)
}

fn build_object(
    src: &MeshSource,
    index: u64,
    split: Split,
    cfg: &CorpusConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<ObjectEntry> {
    let mut rng = object_rng(seed, index);
    let dir = out_dir.join(&src.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| format!("{}/{name}", src.id);

    let mesh = &src.mesh;
    write_file(&dir.join("mesh.obj"), mesh.to_obj().as_bytes())?;
    let target = voxelize_solid(mesh, GRID_RESOLUTION);
    write_file(&dir.join("target.vox"), &target.to_bytes()?)?;

    let seed_face = rng.gen_range(0..mesh.face_count());
    let (lo, hi) = cfg.coverage;
    let target_coverage = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let labeling = grow_occlusion(mesh, seed_face, target_coverage, &mut rng)?;
    let cameras = sample_cameras(cfg.views_per_mesh, &cfg.camera, &mut rng)?;

    let mut views = Vec::new();
    for (ci, cam) in cameras.iter().enumerate() {
        let rv = rasterize(mesh, &labeling, cam)?;
        let rate = match occlusion_rate(&rv.m_3dvis, &rv.m_3docc) {
            Ok(r) if (cfg.rate_limits.0..=cfg.rate_limits.1).contains(&r) => r,
            _ => continue,
        };
        let synth = synth_occlusion_mask(&rv.m_3docc, &rv.m_3dvis, &cfg.mask, &mut rng)?;
        let m_v = rv.m_3dvis;
        let m_o = synth.m_o;
        let reference = crate::math::norm(cam.position);
        let features = toy_view_encoder(&rv.render, &m_o, cfg.corruption, reference, &mut rng)?;
        let stem = format!("v{ci:02}");
        m_v.save_pgm(&dir.join(format!("{stem}_mv.pgm")))?;
        m_o.save_pgm(&dir.join(format!("{stem}_mo.pgm")))?;
        rv.render.depth_map().save(&dir.join(format!("{stem}_depth.dpth")))?;
        write_file(&dir.join(format!("{stem}_feat.dtns")), &features.to_bytes())?;
        views.push(ViewEntry {
            camera: ci,
            m_v: rel(&format!("{stem}_mv.pgm")),
            m_o: rel(&format!("{stem}_mo.pgm")),
            depth: rel(&format!("{stem}_depth.dpth")),
            features: rel(&format!("{stem}_feat.dtns")),
            rate,
            visible_px: m_v.count(),
            occluder_px: m_o.count(),
            noise_seed: rng.gen(),
        });
    }
    Ok(ObjectEntry {
        id: src.id.clone(),
        class: src.class,
        split,
        mesh: rel("mesh.obj"),
        seed: index,
        extent: {
            let (lo, hi) = mesh.bounds();
            (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max)
        },
        target: rel("target.vox"),
        labeling: LabelingEntry {
            seed_face,
            target_coverage,
            achieved_coverage: labeling.achieved_coverage,
            faces: labeling.occluded_faces.len(),
        },
        cameras,
        views,
    })
}

/// One view loaded back from disk.
#[derive(Clone, Debug)]
pub struct LoadedView {
    pub camera: PinholeCamera,
    pub m_v: Mask,
    pub depth: DepthMap,
    pub features: Tensor,
    pub visible_px: usize,
    pub occluder_px: usize,
    pub rate: f64,
    pub noise_seed: u64,
}

impl LoadedView {
    /// Noisy back-projection of the visible pixels; identical on every call.
    pub fn stereo_points(&self, view: usize, noise_std: f64) -> Result<StereoCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        back_project_depth(
            |r, c| self.depth.get(r, c) as f64,
            &self.camera,
            view,
            Some(&self.m_v),
            noise_std,
            &mut rng,
        )
    }
}

#[derive(Clone, Debug)]
pub struct LoadedObject {
    pub id: String,
    pub class: Option<ShapeClass>,
    pub split: Split,
    pub target: VoxelGrid,
    pub views: Vec<LoadedView>,
    /// Standard deviation of the stereo point noise.
    pub noise_std: f64,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub hash: String,
    pub objects: Vec<LoadedObject>,
}

impl Corpus {
    pub fn load(root: &Path) -> Result<Self> {
        let (manifest, hash) = Manifest::load_hashed(root)?;
        let mut objects = Vec::with_capacity(manifest.objects.len());
        for o in &manifest.objects {
            let target = VoxelGrid::load(&root.join(&o.target))?;
            let mut views = Vec::with_capacity(o.views.len());
            for v in &o.views {
                let camera =
                    o.cameras.get(v.camera).cloned().ok_or_else(|| {
                        Error::Format(format!("{}: view refers to missing camera {}", o.id, v.camera))
                    })?;
                let feat_path = root.join(&v.features);
                let bytes = std::fs::read(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
                views.push(LoadedView {
                    camera,
                    m_v: Mask::load_pgm(&root.join(&v.m_v))?,
                    depth: DepthMap::load(&root.join(&v.depth))?,
                    features: Tensor::read_from(&mut bytes.as_slice())?,
                    visible_px: v.visible_px,
                    occluder_px: v.occluder_px,
                    rate: v.rate,
                    noise_seed: v.noise_seed,
                });
            }
            objects.push(LoadedObject {
                id: o.id.clone(),
                class: o.class,
                split: o.split,
                target,
                views,
                noise_std: manifest.config.noise_sigma * o.extent,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            hash,
            objects,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedObject> {
        self.objects.iter().filter(move |o| o.split == split)
    }
}
