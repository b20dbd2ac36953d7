use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::{encode_target, make_flow_sample};
use super::model::{Conditioning, FlowModel, ModelConfig};
use super::optim::{AdamW, AdamWConfig};
use crate::attention::FusionWeights;
use crate::data::{Corpus, LoadedObject, Split};
use crate::error::{Error, Result};
use crate::geometry::{filter_outliers, voxelize_clamped, OutlierFilter, VoxelGrid, GRID_RESOLUTION};
use crate::tensor::{Tape, Tensor};

pub const MAX_VIEWS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero over the configured steps.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub cfg_drop: f64,
    /// Drop views and geometry with separate coin flips instead of jointly.
    pub independent_drop: bool,
    pub batch: usize,
    /// Optimizer steps; replaced by `epochs × ⌈objects / batch⌉` when `epochs` is set.
    pub steps: usize,
    pub epochs: Option<usize>,
    pub seed: u64,
    /// Inclusive range the per-item view count is drawn from.
    pub view_count_range: [usize; 2],
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub outlier: OutlierFilter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            lr_schedule: LrSchedule::Constant,
            cfg_drop: 0.1,
            independent_drop: false,
            batch: 2,
            steps: 2000,
            epochs: None,
            seed: 0,
            view_count_range: [1, MAX_VIEWS],
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            outlier: OutlierFilter::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Contract(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.cfg_drop) {
            return Err(Error::Contract(format!("cfg_drop {} outside [0, 1)", self.cfg_drop)));
        }
        if self.batch == 0 {
            return Err(Error::Contract("batch must be positive".into()));
        }
        let [lo, hi] = self.view_count_range;
        if lo == 0 || lo > hi || hi > MAX_VIEWS {
            return Err(Error::Contract(format!(
                "view count range [{lo}, {hi}] outside 1..={MAX_VIEWS}"
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// Partial-object voxels `V_O` from the noisy stereo points of `views`.
pub fn partial_voxels(object: &LoadedObject, views: &[usize], filter: &OutlierFilter) -> Result<VoxelGrid> {
    let mut points = Vec::new();
    for &v in views {
        let view = object
            .views
            .get(v)
            .ok_or_else(|| Error::Contract(format!("{} has no view {v}", object.id)))?;
        points.extend(view.stereo_points(v, object.noise_std)?.points);
    }
    let kept = filter_outliers(&points, filter);
    Ok(voxelize_clamped(&kept, GRID_RESOLUTION))
}

/// Condition from a subset of an object's views, with or without geometry.
pub fn build_conditioning(
    object: &LoadedObject,
    views: &[usize],
    with_geometry: bool,
    filter: &OutlierFilter,
) -> Result<Conditioning> {
    let mut features = Vec::with_capacity(views.len());
    let mut counts = Vec::with_capacity(views.len());
    for &v in views {
        let view = object
            .views
            .get(v)
            .ok_or_else(|| Error::Contract(format!("{} has no view {v}", object.id)))?;
        features.push(view.features.clone());
        counts.push((view.visible_px, view.occluder_px));
    }
    let weights = if views.is_empty() {
        FusionWeights::single()
    } else {
        FusionWeights::from_pixel_counts(&counts)?
    };
    let geometry = if with_geometry {
        Some(partial_voxels(object, views, filter)?)
    } else {
        None
    };
    Ok(Conditioning::Views {
        features,
        weights,
        geometry,
    })
}

/// Training objects with their encoded latents.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub objects: Vec<LoadedObject>,
    pub latents: Vec<Tensor>,
}

impl TrainSet {
    pub fn new(objects: Vec<LoadedObject>, model: &ModelConfig) -> Result<Self> {
        let objects: Vec<_> = objects.into_iter().filter(|o| !o.views.is_empty()).collect();
        if objects.is_empty() {
            return Err(Error::Contract("no training object has a usable view".into()));
        }
        let latents = objects
            .iter()
            .map(|o| encode_target(&o.target, model))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { objects, latents })
    }

    pub fn from_corpus(corpus: &Corpus, model: &ModelConfig) -> Result<Self> {
        Self::new(corpus.split(Split::Train).cloned().collect(), model)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// One batch element: `key` seeds the item's private random draws.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub key: u64,
    pub z0: &'a Tensor,
    pub object: &'a LoadedObject,
}

/// What happened to one item during a step.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemRecord {
    pub loss: f64,
    pub t: f64,
    /// Views used; 0 when the views were dropped.
    pub views: usize,
    pub geometry: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Items per view count; index 0 counts dropped views.
    #[serde(rename = "K_hist")]
    pub k_hist: [usize; MAX_VIEWS + 1],
}

/// Mean squared error over every token and channel.
pub fn cfm_loss(tape: &mut Tape, prediction: crate::tensor::Var, target: &Tensor) -> Result<crate::tensor::Var> {
    if tape.shape(prediction) != target.shape() {
        return Err(Error::shape("cfm loss", tape.shape(prediction), target.shape()));
    }
    let t = tape.leaf(target);
    let d = tape.sub(prediction, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

fn item_condition(
    model: &FlowModel,
    item: &BatchItem<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Conditioning, usize, bool)> {
    let available = item.object.views.len();
    let [lo, hi] = cfg.view_count_range;
    let hi = hi.min(available);
    let lo = lo.min(hi);
    let k = rng.gen_range(lo..=hi);
    let chosen = index::sample(rng, available, k).into_vec();
    let (drop_views, drop_geo) = if cfg.independent_drop {
        (rng.gen::<f64>() < cfg.cfg_drop, rng.gen::<f64>() < cfg.cfg_drop)
    } else {
        let d = rng.gen::<f64>() < cfg.cfg_drop;
        (d, d)
    };
    if drop_views && drop_geo {
        return Ok((Conditioning::Null, 0, false));
    }
    let geometry = model.config.use_geometry && !drop_geo;
    let mut cond = build_conditioning(item.object, &chosen, geometry, &cfg.outlier)?;
    if drop_views {
        if let Conditioning::Views { features, weights, .. } = &mut cond {
            features.clear();
            *weights = FusionWeights::single();
        }
    }
    Ok((cond, if drop_views { 0 } else { k }, geometry))
}

/// Accumulates gradients of the batch-mean CFM loss into the model store
/// without touching the optimizer.
pub fn accumulate_batch(
    model: &mut FlowModel,
    batch: &[BatchItem<'_>],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<Vec<ItemRecord>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(batch.len());
    let mut records = Vec::with_capacity(batch.len());
    for item in batch {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        rng.set_stream(item.key);
        let (cond, views, geometry) = item_condition(model, item, cfg, &mut rng)?;
        let sample = make_flow_sample(item.z0, &mut rng);
        let pred = model.forward(&mut tape, &sample.z_t, sample.t, &cond)?;
        let loss = cfm_loss(&mut tape, pred, &sample.velocity)?;
        records.push(ItemRecord {
            loss: tape.scalar(loss),
            t: sample.t,
            views,
            geometry,
        });
        losses.push(loss);
    }
    let rows = losses
        .iter()
        .map(|&l| tape.reshape(l, [1, 1]))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_rows(&rows)?;
    let total = tape.mean(stacked);
    tape.backward_into(total, &mut model.store)?;
    Ok(records)
}

/// One optimizer step on `batch`; returns the per-item records.
pub fn train_step(
    model: &mut FlowModel,
    opt: &mut AdamW,
    batch: &[BatchItem<'_>],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<Vec<ItemRecord>> {
    model.store.zero_grad();
    let records = accumulate_batch(model, batch, cfg, step_seed)?;
    opt.update(&mut model.store, 1.0)?;
    if !model.store.all_finite() {
        return Err(Error::Undefined("non-finite parameters after update".into()));
    }
    Ok(records)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of step `step` under run seed `seed`; resuming at any step replays it exactly.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    splitmix(seed ^ splitmix(step))
}

/// Model, optimizer and step counter of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: FlowModel,
    pub opt: AdamW,
    pub config: TrainConfig,
    /// SHA-256 of the corpus manifest the run trains on.
    pub manifest_hash: [u8; 32],
    pub step: u64,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, config: TrainConfig, manifest_hash: [u8; 32]) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::MAX);
        let model = FlowModel::new(model_cfg, &mut rng)?;
        let opt = AdamW::new(config.optimizer(), &model.store);
        Ok(Self {
            model,
            opt,
            config,
            manifest_hash,
            step: 0,
        })
    }

    /// Steps the run is configured for on `data`.
    pub fn total_steps(&self, data: &TrainSet) -> usize {
        match self.config.epochs {
            Some(e) => e * data.len().div_ceil(self.config.batch),
            None => self.config.steps,
        }
    }

    /// Learning rate of the current step.
    pub fn current_lr(&self, data: &TrainSet) -> f64 {
        match self.config.lr_schedule {
            LrSchedule::Constant => self.config.lr,
            LrSchedule::Cosine => {
                let total = self.total_steps(data).max(1) as f64;
                let x = (self.step as f64 / total).min(1.0);
                0.5 * self.config.lr * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }

    pub fn step_once(&mut self, data: &TrainSet) -> Result<StepLog> {
        let seed = step_seed(self.config.seed, self.step);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = if self.config.batch <= data.len() {
            index::sample(&mut rng, data.len(), self.config.batch).into_vec()
        } else {
            (0..self.config.batch).map(|_| rng.gen_range(0..data.len())).collect()
        };
        let batch: Vec<BatchItem<'_>> = picks
            .iter()
            .enumerate()
            .map(|(slot, &i)| BatchItem {
                key: slot as u64 + 1,
                z0: &data.latents[i],
                object: &data.objects[i],
            })
            .collect();
        let lr = self.current_lr(data);
        self.opt.config.lr = lr;
        let records = train_step(&mut self.model, &mut self.opt, &batch, &self.config, seed)?;
        let mut k_hist = [0; MAX_VIEWS + 1];
        for r in &records {
            k_hist[r.views.min(MAX_VIEWS)] += 1;
        }
        let log = StepLog {
            step: self.step,
            loss: records.iter().map(|r| r.loss).sum::<f64>() / records.len() as f64,
            lr,
            k_hist,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs until `until` total steps, writing one NDJSON line per step to `log`.
    pub fn run(&mut self, data: &TrainSet, until: u64, mut log: Option<&mut dyn Write>) -> Result<Vec<StepLog>> {
        let mut out = Vec::new();
        while self.step < until {
            let entry = self.step_once(data)?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&entry)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            out.push(entry);
        }
        Ok(out)
    }
}
