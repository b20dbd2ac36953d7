//! Held-out evaluation of trained models and the structural ablation variants.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LoadedObject;
use crate::error::{Error, Result};
use crate::flow::{
    baseline_sequential_conditioning, build_conditioning, partial_voxels, sample, FlowModel, ModelConfig, SampleConfig,
    TrainConfig,
};
use crate::geometry::{OutlierFilter, VoxelGrid};
use crate::metrics::{evaluate_pairs, EvalPair, EvalPointConfig, EvalReport};

/// Structural variants compared by the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// Gate fixed to 1.
    #[serde(rename = "-gating")]
    NoGating,
    /// One view per step: single-view training and alternating sampling.
    #[serde(rename = "-view-wise")]
    NoViewWise,
    /// Geometry tokens dropped.
    #[serde(rename = "-stereo")]
    NoStereo,
    #[serde(rename = "-all")]
    NoAll,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoGating,
        Variant::NoViewWise,
        Variant::NoStereo,
        Variant::NoAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGating => "-gating",
            Variant::NoViewWise => "-view-wise",
            Variant::NoStereo => "-stereo",
            Variant::NoAll => "-all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown variant {s}")))
    }

    fn gating(self) -> bool {
        !matches!(self, Variant::NoGating | Variant::NoAll)
    }

    fn geometry(self) -> bool {
        !matches!(self, Variant::NoStereo | Variant::NoAll)
    }

    /// Whether sampling alternates over single views.
    pub fn sequential(self) -> bool {
        matches!(self, Variant::NoViewWise | Variant::NoAll)
    }

    /// Model and training settings realizing the variant.
    pub fn configure(self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        let mut t = train.clone();
        m.use_gating &= self.gating();
        m.use_geometry &= self.geometry();
        if self.sequential() {
            t.view_count_range = [1, 1];
        }
        (m, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Views given to every held-out object (capped by availability).
    pub views: usize,
    pub seed: u64,
    pub points: EvalPointConfig,
    /// One voxel of tolerance in the recall.
    pub dilate_recall: bool,
    pub outlier: OutlierFilter,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            views: 4,
            seed: 0,
            points: EvalPointConfig::default(),
            dilate_recall: false,
            outlier: OutlierFilter::default(),
        }
    }
}

/// Generated occupancy for one object together with its conditioning voxels.
#[derive(Clone, Debug)]
pub struct Generation {
    pub id: String,
    pub grid: VoxelGrid,
    pub conditioning: VoxelGrid,
    /// View index used at each sampling step (sequential sampling only).
    pub trace: Vec<usize>,
}

/// Conditions on the first `views` views of `object` and samples once.
/// The sampling seed depends only on `seed` and `index`.
pub fn generate(
    model: &FlowModel,
    object: &LoadedObject,
    index: u64,
    views: usize,
    sequential: bool,
    sample_cfg: &SampleConfig,
    seed: u64,
    outlier: &OutlierFilter,
) -> Result<Generation> {
    if views == 0 || views > object.views.len() {
        return Err(Error::Contract(format!(
            "{} has {} views, {views} requested",
            object.id,
            object.views.len()
        )));
    }
    let chosen: Vec<usize> = (0..views).collect();
    let cond = build_conditioning(object, &chosen, model.config.use_geometry, outlier)?;
    let conditioning = partial_voxels(object, &chosen, outlier)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut trace = Vec::new();
    let grid = if sequential {
        baseline_sequential_conditioning(model, &cond, sample_cfg, &mut rng, &mut trace)?
    } else {
        sample(model, &cond, sample_cfg, &mut rng)?
    };
    Ok(Generation {
        id: object.id.clone(),
        grid,
        conditioning,
        trace,
    })
}

/// Samples every object once and scores it against its target.
pub fn evaluate_model<'a>(
    model: &FlowModel,
    objects: impl IntoIterator<Item = &'a LoadedObject>,
    sequential: bool,
    sample_cfg: &SampleConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut pairs = Vec::new();
    for (i, o) in objects.into_iter().enumerate() {
        let k = cfg.views.min(o.views.len());
        if k == 0 {
            continue;
        }
        let g = generate(model, o, i as u64, k, sequential, sample_cfg, cfg.seed, &cfg.outlier)?;
        pairs.push(EvalPair {
            id: g.id,
            generated: g.grid,
            target: o.target.clone(),
            conditioning: g.conditioning,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Contract("no evaluation object has a usable view".into()));
    }
    evaluate_pairs(&pairs, &cfg.points, cfg.dilate_recall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub chamfer_mean: Option<f64>,
    pub recall_mean: Option<f64>,
    pub n: usize,
}

impl AblationRow {
    pub fn from_report(variant: &str, report: &EvalReport) -> Self {
        Self {
            variant: variant.to_string(),
            chamfer_mean: report.aggregate.chamfer_mean,
            recall_mean: report.aggregate.recall_mean,
            n: report.aggregate.n,
        }
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("variant,chamfer_mean,recall_mean,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.variant,
            cell(r.chamfer_mean),
            cell(r.recall_mean),
            r.n
        );
    }
    out
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:<12} {:>14} {:>12} {:>5}\n",
        "variant", "chamfer_mean", "recall_mean", "n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>14} {:>12} {:>5}",
            r.variant,
            cell(r.chamfer_mean),
            cell(r.recall_mean),
            r.n
        );
    }
    out
}
