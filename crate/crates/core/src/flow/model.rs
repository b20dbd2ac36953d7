use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::attention::{
    transformer_block, BlockConditioning, BlockOptions, BlockParams, FusionWeights, LayerNormParams, DEFAULT_EPS_GATE,
};
use crate::data::features::VIEW_FEATURES;
use crate::error::{Error, Result};
use crate::geometry::{patchify_and_project, toy_structure_encoder, StructureEncoderParams, VoxelGrid, LATTICE_SIDE};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub latent_channels: usize,
    /// Latent patch edge on the 16³ lattice.
    pub patch: usize,
    /// Width of the sinusoidal timestep features.
    pub time_features: usize,
    pub use_gating: bool,
    pub use_geometry: bool,
    pub eps_gate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            blocks: 4,
            heads: 4,
            latent_channels: 1,
            patch: 4,
            time_features: 64,
            use_gating: true,
            use_geometry: true,
            eps_gate: DEFAULT_EPS_GATE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Contract(format!(
                "dim must be even and positive, got {}",
                self.dim
            )));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Contract(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.patch == 0 || LATTICE_SIDE % self.patch != 0 {
            return Err(Error::Contract(format!(
                "patch {} does not divide lattice side {LATTICE_SIDE}",
                self.patch
            )));
        }
        if self.latent_channels == 0 || self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::Contract(
                "latent_channels must be positive and time_features even".into(),
            ));
        }
        if !(self.eps_gate > 0.0) {
            return Err(Error::Contract("eps_gate must be positive".into()));
        }
        Ok(())
    }

    /// Latent tokens per sample.
    pub fn tokens(&self) -> usize {
        (LATTICE_SIDE / self.patch).pow(3)
    }

    /// Values per latent token.
    pub fn token_width(&self) -> usize {
        self.patch.pow(3) * self.latent_channels
    }

    pub fn latent_shape(&self) -> [usize; 2] {
        [self.tokens(), self.token_width()]
    }
}

/// Raw conditioning for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioning {
    /// Dropped condition: the learned null view token and no geometry.
    Null,
    /// An empty view list falls back to the null view token.
    Views {
        /// Raw per-view patch features, each `[T × VIEW_FEATURES]`.
        features: Vec<Tensor>,
        weights: FusionWeights,
        /// Partial-object voxels `V_O`; `None` gives an empty token set.
        geometry: Option<VoxelGrid>,
    },
}

impl Conditioning {
    pub fn view_count(&self) -> usize {
        match self {
            Conditioning::Null => 0,
            Conditioning::Views { features, .. } => features.len(),
        }
    }

    /// Keeps only view `index` (full weight), retaining the geometry.
    pub fn single_view(&self, index: usize) -> Result<Conditioning> {
        match self {
            Conditioning::Null => Ok(Conditioning::Null),
            Conditioning::Views { features, geometry, .. } => Ok(Conditioning::Views {
                features: vec![features
                    .get(index)
                    .cloned()
                    .ok_or_else(|| Error::Contract(format!("no view {index}")))?],
                weights: FusionWeights::single(),
                geometry: geometry.clone(),
            }),
        }
    }

    pub fn without_geometry(&self) -> Conditioning {
        match self {
            Conditioning::Null => Conditioning::Null,
            Conditioning::Views { features, weights, .. } => Conditioning::Views {
                features: features.clone(),
                weights: weights.clone(),
                geometry: None,
            },
        }
    }
}

/// Parameter handles of the flow transformer.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_view: ParamId,
    pub b_view: ParamId,
    pub null_view: ParamId,
    pub t_w1: ParamId,
    pub t_b1: ParamId,
    pub t_w2: ParamId,
    pub t_b2: ParamId,
    pub encoder: StructureEncoderParams,
    pub blocks: Vec<BlockParams>,
    pub ln_out: LayerNormParams,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl ModelParams {
    /// Parameters that only carry conditioning signal into the network.
    pub fn conditioning_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_view, self.b_view, self.encoder.w, self.encoder.b];
        for b in &self.blocks {
            ids.extend([b.gate.w1, b.gate.b1, b.gate.w2, b.gate.b2]);
            ids.extend([b.geo_attn.wq, b.geo_attn.wk, b.geo_attn.wv, b.geo_attn.wo]);
            ids.extend([b.ln_geo.gain, b.ln_geo.bias]);
        }
        ids
    }
}

/// Sinusoidal features of a scalar: `[sin(x·f_i), cos(x·f_i)]` with
/// geometric frequencies `f_i = 10000^(-i/half)`.
pub fn sinusoidal(x: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = Vec::with_capacity(width);
    for i in 0..half {
        let f = (-(i as f64) / half as f64 * 10000f64.ln()).exp();
        out.push((x * f).sin());
    }
    for i in 0..half {
        let f = (-(i as f64) / half as f64 * 10000f64.ln()).exp();
        out.push((x * f).cos());
    }
    out
}

/// Fixed 3D positional embedding of a patch centre in lattice units; each
/// axis gets `dim / 6` frequency pairs and leftover columns stay zero.
pub fn patch_position_embedding(origin: [usize; 3], patch: usize, dim: usize) -> Vec<f64> {
    let per_axis = (dim / 6) * 2;
    let mut out = Vec::with_capacity(dim);
    for &o in &origin {
        let centre = o as f64 + 0.5 * patch as f64;
        out.extend(sinusoidal(centre, per_axis));
    }
    out.resize(dim, 0.0);
    out
}

/// Diagnostics recorded during one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardInfo {
    pub geo_tokens: usize,
    pub views: usize,
}

/// Velocity network over patchified latent tokens.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
    position_table: Tensor,
}

impl FlowModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut store = ParamStore::new();
        let tw = config.token_width();
        let w_in = store.add("in.w", Tensor::xavier_uniform(tw, d, rng));
        let b_in = store.add("in.b", Tensor::zeros([d]));
        let w_view = store.add("view.w", Tensor::xavier_uniform(VIEW_FEATURES, d, rng));
        let b_view = store.add("view.b", Tensor::zeros([d]));
        let null_view = store.add("view.null", Tensor::xavier_uniform(1, d, rng));
        let t_w1 = store.add("time.w1", Tensor::xavier_uniform(config.time_features, d, rng));
        let t_b1 = store.add("time.b1", Tensor::zeros([d]));
        let t_w2 = store.add("time.w2", Tensor::xavier_uniform(d, d, rng));
        let t_b2 = store.add("time.b2", Tensor::zeros([d]));
        let encoder = StructureEncoderParams::init(&mut store, "geo_enc", config.latent_channels, rng);
        let blocks = (0..config.blocks)
            .map(|i| BlockParams::init(&mut store, &format!("block{i}"), d, config.heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let ln_out = LayerNormParams::init(&mut store, "out.ln", d);
        let w_out = store.add("out.w", Tensor::xavier_uniform(d, tw, rng));
        let b_out = store.add("out.b", Tensor::zeros([tw]));
        let position_table = Self::position_table(&config);
        Ok(Self {
            config,
            store,
            params: ModelParams {
                w_in,
                b_in,
                w_view,
                b_view,
                null_view,
                t_w1,
                t_b1,
                t_w2,
                t_b2,
                encoder,
                blocks,
                ln_out,
                w_out,
                b_out,
            },
            position_table,
        })
    }

    /// Rebuilds a model around an existing parameter store (checkpoint load).
    pub fn with_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        if model.store.len() != store.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                model.store.len()
            )));
        }
        for (id, name, t) in model.store.iter() {
            let other = store.get(id);
            if store.name(id) != name || other.shape() != t.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {} {:?} does not match {name} {:?}",
                    store.name(id),
                    other.shape(),
                    t.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    fn position_table(config: &ModelConfig) -> Tensor {
        let n = LATTICE_SIDE / config.patch;
        let mut data = Vec::with_capacity(n.pow(3) * config.dim);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let o = [i * config.patch, j * config.patch, k * config.patch];
                    data.extend(patch_position_embedding(o, config.patch, config.dim));
                }
            }
        }
        Tensor::new([n.pow(3), config.dim], data).expect("table size")
    }

    fn patch_index(&self, origin: [usize; 3]) -> usize {
        let n = LATTICE_SIDE / self.config.patch;
        let p = self.config.patch;
        (origin[0] / p * n + origin[1] / p) * n + origin[2] / p
    }

    fn time_embedding(&self, tape: &mut Tape, t: f64) -> Result<Var> {
        let s = sinusoidal(1000.0 * t, self.config.time_features);
        let x = tape.constant([1, self.config.time_features], s)?;
        let p = &self.params;
        let (w1, b1) = (tape.param(&self.store, p.t_w1), tape.param(&self.store, p.t_b1));
        let (w2, b2) = (tape.param(&self.store, p.t_w2), tape.param(&self.store, p.t_b2));
        let h = tape.linear(x, w1, Some(b1))?;
        let h = tape.relu(h);
        let e = tape.linear(h, w2, Some(b2))?;
        tape.reshape(e, [self.config.dim])
    }

    /// Embedded view tokens and their weights for the blocks.
    fn view_tokens(&self, tape: &mut Tape, cond: &Conditioning) -> Result<(Vec<Var>, FusionWeights)> {
        let p = &self.params;
        match cond {
            Conditioning::Null => Ok((vec![tape.param(&self.store, p.null_view)], FusionWeights::single())),
            Conditioning::Views { features, .. } if features.is_empty() => {
                Ok((vec![tape.param(&self.store, p.null_view)], FusionWeights::single()))
            }
            Conditioning::Views { features, weights, .. } => {
                if features.len() != weights.len() {
                    return Err(Error::Contract(format!(
                        "{} view feature sets for {} weights",
                        features.len(),
                        weights.len()
                    )));
                }
                let w = tape.param(&self.store, p.w_view);
                let b = tape.param(&self.store, p.b_view);
                let mut out = Vec::with_capacity(features.len());
                for f in features {
                    if f.shape().len() != 2 || f.shape()[1] != VIEW_FEATURES {
                        return Err(Error::shape("view features", f.shape(), &[0, VIEW_FEATURES]));
                    }
                    let x = tape.leaf(f);
                    out.push(tape.linear(x, w, Some(b))?);
                }
                Ok((out, weights.clone()))
            }
        }
    }

    /// Geometry tokens `[G × D]`, or `None` when there is nothing to attend to.
    fn geometry_tokens(&self, tape: &mut Tape, cond: &Conditioning) -> Result<Option<Var>> {
        let grid = match cond {
            Conditioning::Views { geometry: Some(g), .. } if self.config.use_geometry => g,
            _ => return Ok(None),
        };
        let p = &self.params;
        let volume = toy_structure_encoder(tape, &self.store, &p.encoder, grid)?;
        let w = tape.param(&self.store, p.w_in);
        let b = tape.param(&self.store, p.b_in);
        let geo = patchify_and_project(tape, &volume, self.config.patch, w, Some(b))?;
        let Some(c) = geo.c_geo else {
            return Ok(None);
        };
        let rows: Vec<usize> = geo.origins.iter().map(|&o| self.patch_index(o)).collect();
        let table = tape.leaf(&self.position_table);
        let pos = tape.gather_rows(table, &rows)?;
        Ok(Some(tape.add(c, pos)?))
    }

    /// Predicted velocity `[L × token_width]` for latent tokens `z_t` at time `t`.
    pub fn forward(&self, tape: &mut Tape, z_t: &Tensor, t: f64, cond: &Conditioning) -> Result<Var> {
        self.forward_with_info(tape, z_t, t, cond).map(|(v, _)| v)
    }

    pub fn forward_with_info(
        &self,
        tape: &mut Tape,
        z_t: &Tensor,
        t: f64,
        cond: &Conditioning,
    ) -> Result<(Var, ForwardInfo)> {
        let shape = self.config.latent_shape();
        if z_t.shape() != shape {
            return Err(Error::shape("latent", z_t.shape(), &shape));
        }
        let p = &self.params;
        let x = tape.leaf(z_t);
        let w_in = tape.param(&self.store, p.w_in);
        let b_in = tape.param(&self.store, p.b_in);
        let h = tape.linear(x, w_in, Some(b_in))?;
        let pos = tape.leaf(&self.position_table);
        let h = tape.add(h, pos)?;
        let temb = self.time_embedding(tape, t)?;
        let mut z = tape.add_row(h, temb)?;

        let (views, weights) = self.view_tokens(tape, cond)?;
        let geo = self.geometry_tokens(tape, cond)?;
        let info = ForwardInfo {
            geo_tokens: geo.map_or(0, |g| tape.shape(g)[0]),
            views: views.len(),
        };
        let opts = BlockOptions {
            use_gating: self.config.use_gating,
            eps_gate: self.config.eps_gate,
        };
        for block in &p.blocks {
            let c = BlockConditioning {
                views: &views,
                weights: &weights,
                geo,
            };
            z = transformer_block(tape, &self.store, z, c, block, opts)?;
        }
        let z = p.ln_out.apply(tape, &self.store, z)?;
        let w_out = tape.param(&self.store, p.w_out);
        let b_out = tape.param(&self.store, p.b_out);
        Ok((tape.linear(z, w_out, Some(b_out))?, info))
    }

    /// Velocity without recording gradients for later use.
    pub fn predict(&self, z_t: &Tensor, t: f64, cond: &Conditioning) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, z_t, t, cond)?;
        Ok(tape.to_tensor(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            dim: 16,
            blocks: 1,
            heads: 2,
            patch: 8,
            time_features: 8,
            ..Default::default()
        }
    }

    #[test]
    fn output_shape_and_null_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FlowModel::new(tiny(), &mut rng).unwrap();
        let z = Tensor::randn(m.config.latent_shape(), &mut rng);
        let v = m.predict(&z, 0.3, &Conditioning::Null).unwrap();
        assert_eq!(v.shape(), &[8, 512]);
        assert!(v.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn geometry_tokens_follow_occupied_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = FlowModel::new(tiny(), &mut rng).unwrap();
        let z = Tensor::randn(m.config.latent_shape(), &mut rng);
        let mut grid = VoxelGrid::new(64);
        grid.set(0, 0, 0, true);
        grid.set(63, 63, 63, true);
        let cond = Conditioning::Views {
            features: vec![Tensor::zeros([64, VIEW_FEATURES])],
            weights: FusionWeights::single(),
            geometry: Some(grid),
        };
        let mut tape = Tape::new();
        let (_, info) = m.forward_with_info(&mut tape, &z, 0.5, &cond).unwrap();
        assert_eq!(info.geo_tokens, 2);
        assert_eq!(info.views, 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for bad in [
            ModelConfig { dim: 15, ..tiny() },
            ModelConfig { heads: 3, ..tiny() },
            ModelConfig { patch: 3, ..tiny() },
        ] {
            assert!(FlowModel::new(bad, &mut rng).is_err());
        }
    }
}
