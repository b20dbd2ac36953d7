use rand::Rng;
use serde::{Deserialize, Serialize};

use super::latent::decode_latent;
use super::model::{Conditioning, FlowModel};
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLING_STEPS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub threshold: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            cfg_scale: 3.0,
            threshold: 0.0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Contract("sampling needs at least one step".into()));
        }
        if !self.cfg_scale.is_finite() || !self.threshold.is_finite() {
            return Err(Error::Contract("cfg_scale and threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Anything that predicts a velocity for latent `z` at time `t`.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: f64, cond: &Conditioning) -> Result<Tensor>;
}

impl VelocityField for FlowModel {
    fn velocity(&self, z: &Tensor, t: f64, cond: &Conditioning) -> Result<Tensor> {
        self.predict(z, t, cond)
    }
}

/// `v_u + s·(v_c − v_u)`. Scale 0 skips the conditional pass and scale 1
/// returns the conditional velocity untouched.
pub fn guided_velocity<F: VelocityField + ?Sized>(
    field: &F,
    z: &Tensor,
    t: f64,
    cond: &Conditioning,
    scale: f64,
) -> Result<Tensor> {
    if scale == 0.0 || matches!(cond, Conditioning::Null) {
        return field.velocity(z, t, &Conditioning::Null);
    }
    let vc = field.velocity(z, t, cond)?;
    if scale == 1.0 {
        return Ok(vc);
    }
    let vu = field.velocity(z, t, &Conditioning::Null)?;
    let data = vu
        .data()
        .iter()
        .zip(vc.data())
        .map(|(u, c)| u + scale * (c - u))
        .collect();
    Tensor::new(vc.shape().to_vec(), data)
}

/// Euler integration from `t = 1` down to `0` in uniform steps. `cond_at`
/// chooses the condition used at each step index.
pub fn integrate<'c, F: VelocityField + ?Sized>(
    field: &F,
    mut z: Tensor,
    steps: usize,
    scale: f64,
    mut cond_at: impl FnMut(usize) -> &'c Conditioning,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Contract("sampling needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        let v = guided_velocity(field, &z, t, cond_at(i), scale)?;
        for (a, b) in z.data_mut().iter_mut().zip(v.data()) {
            *a -= dt * b;
        }
    }
    Ok(z)
}

/// Draws `z ~ N(0, I)` with `shape` and integrates it under a fixed condition.
pub fn sample_latent<F: VelocityField + ?Sized>(
    field: &F,
    shape: &[usize],
    cond: &Conditioning,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let z = Tensor::randn(shape.to_vec(), rng);
    integrate(field, z, cfg.steps, cfg.cfg_scale, |_| cond)
}

/// Samples a latent with parallel view fusion and decodes it to 64³ occupancy.
pub fn sample(model: &FlowModel, cond: &Conditioning, cfg: &SampleConfig, rng: &mut impl Rng) -> Result<VoxelGrid> {
    let z = sample_latent(model, &model.config.latent_shape(), cond, cfg, rng)?;
    decode_latent(&z, &model.config, cfg.threshold)
}

/// Smallest multiple of `views` that is at least `base_steps`.
pub fn sampling_step_schedule(views: usize, base_steps: usize) -> Result<usize> {
    if views == 0 {
        return Err(Error::Contract("step schedule needs at least one view".into()));
    }
    Ok(base_steps.div_ceil(views).max(1) * views)
}

/// Alternating single-view conditioning: step `i` sees only view `i mod K`.
/// The view index used at each step is appended to `trace`.
pub fn baseline_sequential_latent<F: VelocityField + ?Sized>(
    field: &F,
    shape: &[usize],
    cond: &Conditioning,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
    trace: &mut Vec<usize>,
) -> Result<Tensor> {
    cfg.validate()?;
    let k = cond.view_count();
    if k == 0 {
        return Err(Error::Contract(
            "sequential conditioning needs at least one view".into(),
        ));
    }
    let steps = sampling_step_schedule(k, cfg.steps)?;
    let singles = (0..k).map(|i| cond.single_view(i)).collect::<Result<Vec<_>>>()?;
    let z = Tensor::randn(shape.to_vec(), rng);
    integrate(field, z, steps, cfg.cfg_scale, |i| {
        trace.push(i % k);
        &singles[i % k]
    })
}

pub fn baseline_sequential_conditioning(
    model: &FlowModel,
    cond: &Conditioning,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
    trace: &mut Vec<usize>,
) -> Result<VoxelGrid> {
    let z = baseline_sequential_latent(model, &model.config.latent_shape(), cond, cfg, rng, trace)?;
    decode_latent(&z, &model.config, cfg.threshold)
}

/// Exact marginal velocity of the linear path when every latent coordinate
/// is drawn from `N(mean, sigma²)`; the null condition uses `null_mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianFlow {
    pub mean: Vec<f64>,
    pub null_mean: Vec<f64>,
    pub sigma: f64,
}

impl LinearGaussianFlow {
    fn mean_for(&self, cond: &Conditioning) -> &[f64] {
        match cond {
            Conditioning::Null => &self.null_mean,
            _ => &self.mean,
        }
    }

    /// Endpoint of the exact flow started from noise `eps` at `t = 1`.
    pub fn exact_endpoint(&self, eps: &Tensor, cond: &Conditioning) -> Vec<f64> {
        self.mean_for(cond)
            .iter()
            .zip(eps.data())
            .map(|(m, e)| m + self.sigma * e)
            .collect()
    }
}

impl VelocityField for LinearGaussianFlow {
    fn velocity(&self, z: &Tensor, t: f64, cond: &Conditioning) -> Result<Tensor> {
        let mu = self.mean_for(cond);
        if mu.len() != z.len() {
            return Err(Error::shape("linear flow", z.shape(), &[mu.len()]));
        }
        let s2 = self.sigma * self.sigma;
        let var = (1.0 - t).powi(2) * s2 + t * t;
        let a = (t - (1.0 - t) * s2) / var;
        let data = z
            .data()
            .iter()
            .zip(mu)
            .map(|(x, m)| a * (x - (1.0 - t) * m) - m)
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }
}
