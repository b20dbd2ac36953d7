use amodal_core::attention::{
    view_wise_cross_attention, AttentionParams, FusionWeights, GatingParams, LayerNormParams,
};
use amodal_core::tensor::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct Layer {
    pub store: ParamStore,
    pub ap: AttentionParams,
    pub gp: GatingParams,
    pub ln: LayerNormParams,
}

/// Attention, gating and layer-norm parameters, all drawn uniformly from ±0.8.
pub fn layer(d: usize, heads: usize, seed: u64) -> Layer {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ap = AttentionParams::init(&mut store, "a", d, heads, &mut r).unwrap();
    let gp = GatingParams::init(&mut store, "g", d, &mut r).unwrap();
    let ln = LayerNormParams::init(&mut store, "ln", d);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = r.gen_range(-0.8..0.8);
        }
    }
    Layer { store, ap, gp, ln }
}

pub fn view_wise(l: &Layer, z: &Tensor, views: &[Tensor], w: &FusionWeights) -> Vec<f64> {
    let mut t = Tape::new();
    let zv = t.leaf(z);
    let vs: Vec<Var> = views.iter().map(|v| t.leaf(v)).collect();
    let out = view_wise_cross_attention(&mut t, &l.store, zv, &vs, w, &l.ap, &l.ln).unwrap();
    t.value(out).to_vec()
}
