//! Cross attention over image tokens, visibility-weighted view fusion, and
//! geometry-gated cross attention, plus the transformer block that stacks them.
//!
//! Row-vector convention throughout: tokens are rows, a projection is `x·W`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Default stabilizer inside `log(g + eps_gate)`.
pub const DEFAULT_EPS_GATE: f64 = 1e-6;
/// Default layer-norm epsilon.
pub const DEFAULT_LN_EPS: f64 = 1e-5;
/// Initial bias of the gating head; `sigmoid(4) ≈ 0.982`, so gates start open.
pub const GATE_BIAS_INIT: f64 = 4.0;

/// Query/key/value/output projections of multi-head attention.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Contract(format!(
                "dim {dim} is not divisible by head count {heads}"
            )));
        }
        let mut w = |n: &str| store.add(format!("{prefix}.{n}"), Tensor::xavier_uniform(dim, dim, rng));
        Ok(Self {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::full([dim], 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros([dim])),
            eps: DEFAULT_LN_EPS,
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layernorm(x, g, b, self.eps)
    }
}

/// Two-layer gate head: `D → D/2`, ReLU, `D/2 → 1`, sigmoid.
#[derive(Clone, Debug)]
pub struct GatingParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GatingParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim % 2 != 0 || dim == 0 {
            return Err(Error::Contract(format!("gating needs an even width, got {dim}")));
        }
        let half = dim / 2;
        Ok(Self {
            w1: store.add(format!("{prefix}.w1"), Tensor::xavier_uniform(dim, half, rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros([half])),
            w2: store.add(format!("{prefix}.w2"), Tensor::xavier_uniform(half, 1, rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::full([1], GATE_BIAS_INIT)),
        })
    }
}

/// Normalized per-view fusion weights derived from visibility ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    tau: Vec<f64>,
    w: Vec<f64>,
}

impl FusionWeights {
    /// `tau_n = m_v / (m_o + m_v)` from raw (visible, occluded) pixel counts.
    pub fn from_pixel_counts(counts: &[(usize, usize)]) -> Result<Self> {
        let tau = counts
            .iter()
            .map(|&(vis, occ)| {
                if vis + occ == 0 {
                    0.0
                } else {
                    vis as f64 / (vis + occ) as f64
                }
            })
            .collect();
        Self::from_ratios(tau)
    }

    pub fn from_ratios(tau: Vec<f64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::Contract("fusion needs at least one view".into()));
        }
        if let Some(bad) = tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Contract(format!("visibility ratio {bad} outside [0, 1]")));
        }
        let total: f64 = tau.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateVisibility);
        }
        let w = tau.iter().map(|t| t / total).collect();
        Ok(Self { tau, w })
    }

    /// Single view with full weight.
    pub fn single() -> Self {
        Self {
            tau: vec![1.0],
            w: vec![1.0],
        }
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Reorders views; `order[i]` is the old index of the new i-th view.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            tau: order.iter().map(|&i| self.tau[i]).collect(),
            w: order.iter().map(|&i| self.w[i]).collect(),
        }
    }
}

/// Per-head attention probabilities `softmax(Q_h K_hᵀ/√d_head + bias)`.
///
/// `key_bias`, when given, is one value per key shared by every query row
/// and every head. Also returns the per-head value projections.
fn head_probabilities(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AttentionParams,
    query: Var,
    keys: Var,
    key_bias: Option<Var>,
) -> Result<(Vec<Var>, Var)> {
    let wq = tape.param(store, p.wq);
    let wk = tape.param(store, p.wk);
    let wv = tape.param(store, p.wv);
    let q = tape.matmul(query, wq)?;
    let k = tape.matmul(keys, wk)?;
    let v = tape.matmul(keys, wv)?;
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let mut logits = tape.scale(logits, scale);
        if let Some(b) = key_bias {
            logits = tape.add_row(logits, b)?;
        }
        probs.push(tape.softmax_rows(logits));
    }
    Ok((probs, v))
}

/// Attention update `W_o·concat_h(α_h·V_h)` without the residual.
pub fn attend(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AttentionParams,
    query: Var,
    keys: Var,
    key_bias: Option<Var>,
) -> Result<Var> {
    let (qs, ks) = (tape.shape(query).to_vec(), tape.shape(keys).to_vec());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != p.dim || ks[1] != p.dim {
        return Err(Error::shape("attend", &qs, &ks));
    }
    let (probs, v) = head_probabilities(tape, store, p, query, keys, key_bias)?;
    let dh = p.head_dim();
    let mut heads = Vec::with_capacity(p.heads);
    for (h, &a) in probs.iter().enumerate() {
        let vh = tape.slice_cols(v, h * dh, dh)?;
        heads.push(tape.matmul(a, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let wo = tape.param(store, p.wo);
    tape.matmul(merged, wo)
}

/// Attention probabilities for inspection, one `[L×T]` matrix per head.
pub fn attention_probabilities(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AttentionParams,
    query: Var,
    keys: Var,
    key_bias: Option<Var>,
) -> Result<Vec<Var>> {
    Ok(head_probabilities(tape, store, p, query, keys, key_bias)?.0)
}

/// Standard cross attention with residual: `z + attend(z, c)`.
pub fn cross_attention(tape: &mut Tape, store: &ParamStore, z: Var, c: Var, p: &AttentionParams) -> Result<Var> {
    let delta = attend(tape, store, p, z, c, None)?;
    tape.add(z, delta)
}

/// `LayerNorm((1/K) Σ w_n branch_n)`. Zero-weight branches are skipped.
pub fn fuse_views(
    tape: &mut Tape,
    store: &ParamStore,
    branches: &[Var],
    weights: &FusionWeights,
    ln: &LayerNormParams,
) -> Result<Var> {
    if branches.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} view branches but {} fusion weights",
            branches.len(),
            weights.len()
        )));
    }
    let k = branches.len() as f64;
    let mut acc: Option<Var> = None;
    for (&b, &w) in branches.iter().zip(weights.weights()) {
        if w == 0.0 {
            continue;
        }
        let term = tape.scale(b, w / k);
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let acc = acc.ok_or(Error::DegenerateVisibility)?;
    ln.apply(tape, store, acc)
}

/// Parallel per-view cross attention with shared parameters, fused by the
/// visibility-weighted average and a final layer norm.
pub fn view_wise_cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    z: Var,
    views: &[Var],
    weights: &FusionWeights,
    p: &AttentionParams,
    ln: &LayerNormParams,
) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::Contract("view-wise attention needs K >= 1".into()));
    }
    let mut branches = Vec::with_capacity(views.len());
    for (&c, &w) in views.iter().zip(weights.weights()) {
        // Zero-weight views never reach the fused latent.
        branches.push(if w == 0.0 {
            z
        } else {
            cross_attention(tape, store, z, c, p)?
        });
    }
    fuse_views(tape, store, &branches, weights, ln)
}

/// One gate in (0, 1) per geometry token, shape `[G×1]`.
pub fn gating_mlp(tape: &mut Tape, store: &ParamStore, c_geo: Var, gp: &GatingParams) -> Result<Var> {
    let w1 = tape.param(store, gp.w1);
    let b1 = tape.param(store, gp.b1);
    let w2 = tape.param(store, gp.w2);
    let b2 = tape.param(store, gp.b2);
    let h = tape.linear(c_geo, w1, Some(b1))?;
    let h = tape.relu(h);
    let s = tape.linear(h, w2, Some(b2))?;
    Ok(tape.sigmoid(s))
}

/// Per-key logit bias `log(g + eps_gate)` as a `[G]` row.
pub fn gate_bias(tape: &mut Tape, store: &ParamStore, c_geo: Var, gp: &GatingParams, eps_gate: f64) -> Result<Var> {
    if eps_gate <= 0.0 {
        return Err(Error::Contract("eps_gate must be positive".into()));
    }
    let g = gating_mlp(tape, store, c_geo, gp)?;
    let shifted = tape.add_scalar(g, eps_gate);
    let logg = tape.log(shifted)?;
    let n = tape.value(logg).len();
    tape.reshape(logg, [n])
}

/// Geometry-gated cross attention update without the residual.
/// `gate = None` disables gating (every gate treated as equal).
pub fn gated_attend(
    tape: &mut Tape,
    store: &ParamStore,
    query: Var,
    c_geo: Var,
    p: &AttentionParams,
    gate: Option<(&GatingParams, f64)>,
) -> Result<Var> {
    let bias = match gate {
        Some((gp, eps)) => Some(gate_bias(tape, store, c_geo, gp, eps)?),
        None => None,
    };
    attend(tape, store, p, query, c_geo, bias)
}

/// `z + gated_attend(z, c_geo)`; with no geometry tokens the layer is the identity.
pub fn stereo_conditioned_cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    z: Var,
    c_geo: Option<Var>,
    p: &AttentionParams,
    gp: &GatingParams,
    eps_gate: f64,
) -> Result<Var> {
    let Some(c_geo) = c_geo.filter(|&c| tape.shape(c)[0] > 0) else {
        return Ok(z);
    };
    let delta = gated_attend(tape, store, z, c_geo, p, Some((gp, eps_gate)))?;
    tape.add(z, delta)
}

/// Parameters of one pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub ln_self: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln_view: LayerNormParams,
    pub view_attn: AttentionParams,
    pub ln_fuse: LayerNormParams,
    pub ln_geo: LayerNormParams,
    pub geo_attn: AttentionParams,
    pub gate: GatingParams,
    pub ln_ff: LayerNormParams,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
}

/// Feed-forward expansion factor.
pub const FF_EXPANSION: usize = 4;

impl BlockParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = dim * FF_EXPANSION;
        Ok(Self {
            ln_self: LayerNormParams::init(store, &format!("{prefix}.ln_self"), dim),
            self_attn: AttentionParams::init(store, &format!("{prefix}.self_attn"), dim, heads, rng)?,
            ln_view: LayerNormParams::init(store, &format!("{prefix}.ln_view"), dim),
            view_attn: AttentionParams::init(store, &format!("{prefix}.view_attn"), dim, heads, rng)?,
            ln_fuse: LayerNormParams::init(store, &format!("{prefix}.ln_fuse"), dim),
            ln_geo: LayerNormParams::init(store, &format!("{prefix}.ln_geo"), dim),
            geo_attn: AttentionParams::init(store, &format!("{prefix}.geo_attn"), dim, heads, rng)?,
            gate: GatingParams::init(store, &format!("{prefix}.gate"), dim, rng)?,
            ln_ff: LayerNormParams::init(store, &format!("{prefix}.ln_ff"), dim),
            ff_w1: store.add(format!("{prefix}.ff.w1"), Tensor::xavier_uniform(dim, hidden, rng)),
            ff_b1: store.add(format!("{prefix}.ff.b1"), Tensor::zeros([hidden])),
            ff_w2: store.add(format!("{prefix}.ff.w2"), Tensor::xavier_uniform(hidden, dim, rng)),
            ff_b2: store.add(format!("{prefix}.ff.b2"), Tensor::zeros([dim])),
        })
    }

    /// Output projections: zeroing these makes the block the identity.
    pub fn output_projections(&self) -> Vec<ParamId> {
        vec![
            self.self_attn.wo,
            self.view_attn.wo,
            self.geo_attn.wo,
            self.ff_w2,
            self.ff_b2,
        ]
    }
}

/// Conditioning seen by one block.
#[derive(Clone, Copy, Debug)]
pub struct BlockConditioning<'a> {
    /// Per-view feature tokens, each `[T_n × D]`.
    pub views: &'a [Var],
    pub weights: &'a FusionWeights,
    /// Geometry tokens `[G × D]`; `None` (or G = 0) skips the stereo layer.
    pub geo: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockOptions {
    /// When false every gate is treated as 1 (gating ablation).
    pub use_gating: bool,
    pub eps_gate: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            use_gating: true,
            eps_gate: DEFAULT_EPS_GATE,
        }
    }
}

/// Pre-norm residual block:
/// self-attention → view-wise fusion → geometry-gated attention → feed-forward.
///
/// The view-wise sub-layer adds `LN_fuse((1/K) Σ w_n attend(LN(z), c^n))` to
/// the residual stream, so the block is exactly the identity when every
/// output projection is zero.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    z: Var,
    cond: BlockConditioning<'_>,
    params: &BlockParams,
    opts: BlockOptions,
) -> Result<Var> {
    let h = params.ln_self.apply(tape, store, z)?;
    let d = attend(tape, store, &params.self_attn, h, h, None)?;
    let mut z = tape.add(z, d)?;

    if cond.views.len() != cond.weights.len() {
        return Err(Error::Contract(format!(
            "{} views but {} fusion weights",
            cond.views.len(),
            cond.weights.len()
        )));
    }
    if !cond.views.is_empty() {
        let h = params.ln_view.apply(tape, store, z)?;
        let mut branches = Vec::with_capacity(cond.views.len());
        for (&c, &w) in cond.views.iter().zip(cond.weights.weights()) {
            branches.push(if w == 0.0 {
                h
            } else {
                attend(tape, store, &params.view_attn, h, c, None)?
            });
        }
        let fused = fuse_views(tape, store, &branches, cond.weights, &params.ln_fuse)?;
        z = tape.add(z, fused)?;
    }

    if let Some(geo) = cond.geo.filter(|&g| tape.shape(g)[0] > 0) {
        let h = params.ln_geo.apply(tape, store, z)?;
        let gate = opts.use_gating.then_some((&params.gate, opts.eps_gate));
        let d = gated_attend(tape, store, h, geo, &params.geo_attn, gate)?;
        z = tape.add(z, d)?;
    }

    let h = params.ln_ff.apply(tape, store, z)?;
    let w1 = tape.param(store, params.ff_w1);
    let b1 = tape.param(store, params.ff_b1);
    let w2 = tape.param(store, params.ff_w2);
    let b2 = tape.param(store, params.ff_b2);
    let u = tape.linear(h, w1, Some(b1))?;
    let u = tape.relu(u);
    let d = tape.linear(u, w2, Some(b2))?;
    tape.add(z, d)
}
