use amodal_core::attention::{
    attend, fuse_views, gate_bias, gating_mlp, stereo_conditioned_cross_attention, transformer_block,
    view_wise_cross_attention, AttentionParams, BlockConditioning, BlockOptions, BlockParams, FusionWeights,
    GatingParams, LayerNormParams,
};
use amodal_core::flow::{cfm_loss, flow_sample_at, Conditioning, FlowModel, ModelConfig};
use amodal_core::tensor::{finite_diff_check, finite_diff_check_params, ParamCoord, ParamStore, Tape, Tensor, Var};
use amodal_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst relative error of a passing check, or the first failure.
pub type Check = std::result::Result<f64, String>;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces any output to a scalar with fixed random weights, so every entry
/// of the output gradient is exercised.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let mut r = rng(seed ^ 0x5eed);
    let w = tape.constant(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())?;
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn away_from_zero(shape: [usize; 2], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape[0] * shape[1];
    let data = (0..n)
        .map(|_| {
            let v: f64 = r.gen_range(0.05..1.5);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Folds one error into the running worst, failing above `TOL`.
fn track(worst: &mut f64, err: f64, what: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if !(err < TOL) {
        return Err(format!("{}: {err:.2e}", what()));
    }
    *worst = worst.max(err);
    Ok(())
}

fn check_unary(
    worst: &mut f64,
    name: &str,
    make: impl Fn(&mut ChaCha8Rng) -> Tensor,
    op: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> std::result::Result<(), String> {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let x = make(&mut r);
        let err = finite_diff_check(
            |tape, xv| {
                let out = op(tape, xv)?;
                project(tape, out, seed)
            },
            &x,
            H,
        )
        .map_err(|e| e.to_string())?;
        track(worst, err, || format!("{name} seed {seed}"))?;
    }
    Ok(())
}

/// Checks both operands of a binary op.
fn check_binary(
    worst: &mut f64,
    name: &str,
    make: impl Fn(&mut ChaCha8Rng) -> (Tensor, Tensor),
    op: impl Fn(&mut Tape, Var, Var) -> Result<Var>,
) -> std::result::Result<(), String> {
    for seed in 0..SEEDS {
        let (a, b) = make(&mut rng(seed));
        let ea = finite_diff_check(
            |tape, av| {
                let bv = tape.leaf(&b);
                let out = op(tape, av, bv)?;
                project(tape, out, seed)
            },
            &a,
            H,
        )
        .map_err(|e| e.to_string())?;
        let eb = finite_diff_check(
            |tape, bv| {
                let av = tape.leaf(&a);
                let out = op(tape, av, bv)?;
                project(tape, out, seed)
            },
            &b,
            H,
        )
        .map_err(|e| e.to_string())?;
        track(worst, ea.max(eb), || format!("{name} seed {seed}"))?;
    }
    Ok(())
}

pub fn elementwise_ops() -> Check {
    let w = &mut 0.0;
    let m = |r: &mut ChaCha8Rng| Tensor::randn([3, 4], r);
    check_unary(w, "scale", m, |t, x| Ok(t.scale(x, -1.7)))?;
    check_unary(w, "add_scalar", m, |t, x| Ok(t.add_scalar(x, 0.3)))?;
    check_unary(w, "sigmoid", m, |t, x| Ok(t.sigmoid(x)))?;
    check_unary(w, "relu", |r| away_from_zero([3, 4], r), |t, x| Ok(t.relu(x)))?;
    check_unary(
        w,
        "log",
        |r| Tensor::new([3, 4], (0..12).map(|_| r.gen_range(0.2..3.0)).collect()).unwrap(),
        |t, x| t.log(x),
    )?;
    let pair = |r: &mut ChaCha8Rng| (Tensor::randn([3, 4], r), Tensor::randn([3, 4], r));
    check_binary(w, "add", pair, |t, a, b| t.add(a, b))?;
    check_binary(w, "sub", pair, |t, a, b| t.sub(a, b))?;
    check_binary(w, "mul", pair, |t, a, b| t.mul(a, b))?;
    Ok(*w)
}

pub fn matrix_ops() -> Check {
    let w = &mut 0.0;
    check_binary(
        w,
        "matmul",
        |r| (Tensor::randn([3, 4], r), Tensor::randn([4, 2], r)),
        |t, a, b| t.matmul(a, b),
    )?;
    check_binary(
        w,
        "add_row",
        |r| (Tensor::randn([3, 5], r), Tensor::randn([5], r)),
        |t, a, b| t.add_row(a, b),
    )?;
    check_unary(w, "transpose", |r| Tensor::randn([3, 5], r), |t, x| t.transpose(x))?;
    check_unary(
        w,
        "softmax_rows",
        |r| Tensor::randn([4, 6], r),
        |t, x| Ok(t.softmax_rows(x)),
    )?;
    check_unary(w, "reshape", |r| Tensor::randn([4, 6], r), |t, x| t.reshape(x, [6, 4]))?;
    check_unary(
        w,
        "slice_cols",
        |r| Tensor::randn([4, 6], r),
        |t, x| t.slice_cols(x, 2, 3),
    )?;
    check_unary(
        w,
        "gather_rows",
        |r| Tensor::randn([4, 3], r),
        |t, x| t.gather_rows(x, &[3, 0, 3, 1]),
    )?;
    check_unary(w, "sum", |r| Tensor::randn([4, 3], r), |t, x| Ok(t.sum(x)))?;
    check_unary(w, "mean", |r| Tensor::randn([4, 3], r), |t, x| Ok(t.mean(x)))?;
    check_binary(
        w,
        "concat_cols",
        |r| (Tensor::randn([3, 2], r), Tensor::randn([3, 4], r)),
        |t, a, b| t.concat_cols(&[a, b, a]),
    )?;
    check_binary(
        w,
        "concat_rows",
        |r| (Tensor::randn([2, 3], r), Tensor::randn([4, 3], r)),
        |t, a, b| t.concat_rows(&[b, a]),
    )?;
    Ok(*w)
}

pub fn linear_and_layernorm() -> Check {
    let worst = &mut 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let x = Tensor::randn([3, 4], &mut r);
        let w = Tensor::randn([4, 5], &mut r);
        let b = Tensor::randn([5], &mut r);
        for which in 0..3 {
            let target = [&x, &w, &b][which];
            let err = finite_diff_check(
                |tape, v| {
                    let mut vars = [tape.leaf(&x), tape.leaf(&w), tape.leaf(&b)];
                    vars[which] = v;
                    let out = tape.linear(vars[0], vars[1], Some(vars[2]))?;
                    project(tape, out, seed)
                },
                target,
                H,
            )
            .map_err(|e| e.to_string())?;
            track(worst, err, || format!("linear operand {which} seed {seed}"))?;
        }

        let x = Tensor::randn([3, 8], &mut r);
        let g = Tensor::randn([8], &mut r);
        let b = Tensor::randn([8], &mut r);
        for which in 0..3 {
            let target = [&x, &g, &b][which];
            let err = finite_diff_check(
                |tape, v| {
                    let mut vars = [tape.leaf(&x), tape.leaf(&g), tape.leaf(&b)];
                    vars[which] = v;
                    let out = tape.layernorm(vars[0], vars[1], vars[2], 1e-5)?;
                    project(tape, out, seed)
                },
                target,
                H,
            )
            .map_err(|e| e.to_string())?;
            track(worst, err, || format!("layernorm operand {which} seed {seed}"))?;
        }
    }
    Ok(*worst)
}

/// Gradients of `a·l1 + b·l2` equal `a·∇l1 + b·∇l2`; returns the largest deviation.
pub fn backward_linearity() -> Check {
    let mut r = rng(1);
    let x = Tensor::randn([3, 4], &mut r).with_requires_grad(true);
    let grad = |alpha: f64, beta: f64| {
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sigmoid(v);
        let l1 = tape.sum(s);
        let sq = tape.mul(v, v).unwrap();
        let l2 = tape.mean(sq);
        let a = tape.scale(l1, alpha);
        let b = tape.scale(l2, beta);
        let l = tape.add(a, b).unwrap();
        tape.backward(l).unwrap().get(v).unwrap().to_vec()
    };
    let (g1, g2, g) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(2.5, -0.75));
    let dev = (0..g.len())
        .map(|i| (g[i] - (2.5 * g1[i] - 0.75 * g2[i])).abs())
        .fold(0.0, f64::max);
    if dev < 1e-10 {
        Ok(dev)
    } else {
        Err(format!("backward not linear: {dev:.2e}"))
    }
}

/// Random non-trivial values for every parameter, so no branch is
/// saturated or zeroed by its initializer.
fn randomize(store: &mut ParamStore, r: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
}

/// At most `per_tensor` random entries of every parameter tensor.
fn sample_coords(store: &ParamStore, per_tensor: usize, r: &mut ChaCha8Rng) -> Vec<ParamCoord> {
    let mut out = Vec::new();
    for (id, _, t) in store.iter() {
        if t.len() <= per_tensor {
            out.extend((0..t.len()).map(|i| (id, i)));
        } else {
            out.extend((0..per_tensor).map(|_| (id, r.gen_range(0..t.len()))));
        }
    }
    out
}

/// Per-coordinate gradient oracle. Returns `None` when some probed
/// coordinate sits within `H` of a ReLU kink, detected from forward values
/// alone: the central differences at `H` and `H/2` disagree.
fn kink_aware_check<F>(f: F, store: &ParamStore, coords: Option<&[ParamCoord]>) -> Option<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &with_grads).unwrap();
    tape.backward_into(loss, &mut with_grads).unwrap();
    let all: Vec<ParamCoord> = store
        .iter()
        .flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i)))
        .collect();
    let coords = coords.unwrap_or(&all);
    let mut shifted = store.clone();
    let mut eval = |id, i, x: f64| {
        shifted.get_mut(id).data_mut()[i] = x;
        let mut tape = Tape::new();
        let v = f(&mut tape, &shifted).unwrap();
        tape.scalar(v)
    };
    let mut worst: f64 = 0.0;
    for &(id, i) in coords {
        let x = store.get(id).data()[i];
        let fd = |h: f64, eval: &mut dyn FnMut(_, _, f64) -> f64| (eval(id, i, x + h) - eval(id, i, x - h)) / (2.0 * h);
        let (a, b) = (fd(H, &mut eval), fd(H / 2.0, &mut eval));
        eval(id, i, x);
        if (a - b).abs() > 1e-6 * a.abs().max(1.0) {
            return None;
        }
        let ad = with_grads.get(id).grad().map_or(0.0, |g| g[i]);
        worst = worst.max((ad - a).abs() / a.abs().max(1.0));
    }
    Some(worst)
}

/// Runs `check` on consecutive seeds until `SEEDS` of them are kink-free.
fn over_smooth_seeds(name: &str, check: impl Fn(u64) -> Option<f64>) -> Check {
    let worst = &mut 0.0;
    let (mut accepted, mut rejected) = (0, 0);
    let mut seed = 0;
    while accepted < SEEDS {
        match check(seed) {
            Some(err) => {
                track(worst, err, || format!("{name} seed {seed}"))?;
                accepted += 1;
            }
            None => rejected += 1,
        }
        seed += 1;
    }
    if rejected > SEEDS / 2 {
        return Err(format!("{name}: {rejected} seeds rejected as non-smooth"));
    }
    Ok(*worst)
}

pub fn attention_layers() -> Check {
    let worst = &mut 0.0;
    let d = 8;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let ap = AttentionParams::init(&mut store, "a", d, 2, &mut r).unwrap();
        let gp = GatingParams::init(&mut store, "g", d, &mut r).unwrap();
        let ln = LayerNormParams::init(&mut store, "ln", d);
        randomize(&mut store, &mut r, 0.6);
        let z = Tensor::randn([4, d], &mut r);
        let views = [Tensor::randn([3, d], &mut r), Tensor::randn([5, d], &mut r)];
        let geo = Tensor::randn([5, d], &mut r);
        let weights = FusionWeights::from_ratios(vec![0.6, 0.25]).unwrap();

        let cases: Vec<(&str, Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>)> = vec![
            (
                "attend",
                Box::new(|t: &mut Tape, s: &ParamStore| {
                    let (q, k) = (t.leaf(&z), t.leaf(&views[1]));
                    attend(t, s, &ap, q, k, None)
                }),
            ),
            (
                "gating_mlp",
                Box::new(|t: &mut Tape, s: &ParamStore| {
                    let g = t.leaf(&geo);
                    gating_mlp(t, s, g, &gp)
                }),
            ),
            (
                "gate_bias",
                Box::new(|t: &mut Tape, s: &ParamStore| {
                    let g = t.leaf(&geo);
                    gate_bias(t, s, g, &gp, 1e-6)
                }),
            ),
            (
                "fuse_views",
                Box::new(|t: &mut Tape, s: &ParamStore| {
                    let b: Vec<Var> = views.iter().map(|v| t.leaf(&v.clone())).collect();
                    let b = [t.slice_cols(b[0], 0, d)?, t.gather_rows(b[1], &[0, 1, 2])?];
                    fuse_views(t, s, &b, &weights, &ln)
                }),
            ),
            (
                "view_wise_cross_attention",
                Box::new(|t: &mut Tape, s: &ParamStore| {
                    let zv = t.leaf(&z);
                    let vs: Vec<Var> = views.iter().map(|v| t.leaf(v)).collect();
                    view_wise_cross_attention(t, s, zv, &vs, &weights, &ap, &ln)
                }),
            ),
            (
                "stereo_conditioned_cross_attention",
                Box::new(|t: &mut Tape, s: &ParamStore| {
                    let zv = t.leaf(&z);
                    let g = t.leaf(&geo);
                    stereo_conditioned_cross_attention(t, s, zv, Some(g), &ap, &gp, 1e-6)
                }),
            ),
        ];
        for (name, f) in &cases {
            let err = finite_diff_check_params(
                |t, s| {
                    let out = f(t, s)?;
                    project(t, out, seed)
                },
                &store,
                H,
                None,
            )
            .map_err(|e| e.to_string())?;
            track(worst, err, || format!("{name} seed {seed}"))?;
        }

        // Inputs too, not just parameters.
        let err = finite_diff_check(
            |t, g| {
                let zv = t.leaf(&z);
                let out = stereo_conditioned_cross_attention(t, &store, zv, Some(g), &ap, &gp, 1e-6)?;
                project(t, out, seed)
            },
            &geo,
            H,
        )
        .map_err(|e| e.to_string())?;
        track(worst, err, || format!("geometry input seed {seed}"))?;
    }
    Ok(*worst)
}

pub fn single_block_all_parameters() -> Check {
    // L=8, D=16, K=2, G=5.
    let d = 16;
    over_smooth_seeds("block", |seed| {
        let mut r = rng(100 + seed);
        let mut store = ParamStore::new();
        let bp = BlockParams::init(&mut store, "b", d, 4, &mut r).unwrap();
        randomize(&mut store, &mut r, 0.4);
        let z = Tensor::randn([8, d], &mut r);
        let views = [Tensor::randn([6, d], &mut r), Tensor::randn([4, d], &mut r)];
        let geo = Tensor::randn([5, d], &mut r);
        let weights = FusionWeights::from_pixel_counts(&[(70, 30), (40, 60)]).unwrap();
        let f = |t: &mut Tape, s: &ParamStore| {
            let zv = t.leaf(&z);
            let vs: Vec<Var> = views.iter().map(|v| t.leaf(v)).collect();
            let g = t.leaf(&geo);
            let cond = BlockConditioning {
                views: &vs,
                weights: &weights,
                geo: Some(g),
            };
            let out = transformer_block(t, s, zv, cond, &bp, BlockOptions::default())?;
            project(t, out, seed)
        };
        let coords = if seed == 0 {
            None
        } else {
            Some(sample_coords(&store, 12, &mut r))
        };
        kink_aware_check(f, &store, coords.as_deref())
    })
}

pub fn four_block_stack() -> Check {
    let d = 16;
    over_smooth_seeds("stack", |seed| {
        let mut r = rng(200 + seed);
        let mut store = ParamStore::new();
        let blocks: Vec<BlockParams> = (0..4)
            .map(|i| BlockParams::init(&mut store, &format!("block{i}"), d, 4, &mut r).unwrap())
            .collect();
        randomize(&mut store, &mut r, 0.3);
        let z = Tensor::randn([8, d], &mut r);
        let views = [Tensor::randn([6, d], &mut r), Tensor::randn([4, d], &mut r)];
        let geo = Tensor::randn([5, d], &mut r);
        let weights = FusionWeights::from_ratios(vec![0.8, 0.3]).unwrap();
        let f = |t: &mut Tape, s: &ParamStore| {
            let mut h = t.leaf(&z);
            let vs: Vec<Var> = views.iter().map(|v| t.leaf(v)).collect();
            let g = t.leaf(&geo);
            for bp in &blocks {
                let cond = BlockConditioning {
                    views: &vs,
                    weights: &weights,
                    geo: Some(g),
                };
                h = transformer_block(t, s, h, cond, bp, BlockOptions::default())?;
            }
            project(t, h, seed)
        };
        let coords = sample_coords(&store, 3, &mut r);
        kink_aware_check(f, &store, Some(&coords))
    })
}

pub fn cfm_loss_on_a_tiny_model() -> Check {
    let worst = &mut 0.0;
    let cfg = ModelConfig {
        dim: 16,
        blocks: 2,
        heads: 2,
        time_features: 16,
        ..ModelConfig::default()
    };
    for seed in 0..SEEDS {
        let mut r = rng(300 + seed);
        let mut model = FlowModel::new(cfg.clone(), &mut r).unwrap();
        randomize(&mut model.store, &mut r, 0.2);
        let shape = cfg.latent_shape();
        let z0 = Tensor::new(
            shape.clone(),
            (0..shape.iter().product::<usize>())
                .map(|_| if r.gen_bool(0.3) { 1.0 } else { -1.0 })
                .collect(),
        )
        .unwrap();
        let eps = Tensor::randn(shape, &mut r);
        let s = flow_sample_at(&z0, eps, r.gen_range(0.05..0.95));
        let views = vec![Tensor::randn([64, 5], &mut r)];
        let cond = Conditioning::Views {
            features: views,
            weights: FusionWeights::single(),
            geometry: None,
        };
        let coords = sample_coords(&model.store, 2, &mut r);
        let err = finite_diff_check_params(
            |t, store| {
                let m = FlowModel::with_store(cfg.clone(), store.clone())?;
                let pred = m.forward(t, &s.z_t, s.t, &cond)?;
                cfm_loss(t, pred, &s.velocity)
            },
            &model.store,
            H,
            Some(&coords),
        )
        .map_err(|e| e.to_string())?;
        track(worst, err, || format!("cfm seed {seed}"))?;
    }
    Ok(*worst)
}
