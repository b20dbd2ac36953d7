//! Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero on any failure.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use amodal_core::attention::{
    attention_probabilities, cross_attention, gate_bias, gating_mlp, stereo_conditioned_cross_attention, FusionWeights,
};
use amodal_core::data::mesh::unit_cube;
use amodal_core::data::{
    build_corpus, erode, grow_occlusion, is_connected, procedural_meshes, procedural_shape, render, Corpus,
    CorpusConfig, LoadedObject, PinholeCamera, ShapeClass, Split,
};
use amodal_core::experiment::{evaluate_model, generate, EvalConfig, Variant};
use amodal_core::flow::{
    checkpoint_bytes, checkpoint_from_bytes, guided_velocity, integrate, load_checkpoint, parse_hash, save_checkpoint,
    Conditioning, LinearGaussianFlow, LrSchedule, ModelConfig, SampleConfig, StepLog, TrainConfig, TrainSet, Trainer,
    VelocityField,
};
use amodal_core::geometry::{filter_outliers, voxelize, OutlierFilter, VoxelGrid};
use amodal_core::image::Mask;
use amodal_core::metrics::{chamfer_with, cov, mmd, ChamferMode, EvalReport, PointSample};
use amodal_core::tensor::{Tape, Tensor};
use common::attn::{layer, max_diff, rng, view_wise};
use common::grad;
use common::oracle::{chamfer_oracle, cloud, d2, erode_oracle, rel_close, P};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks: [(&str, fn() -> grad::Check); 8] = [
        ("elementwise", grad::elementwise_ops),
        ("matrix", grad::matrix_ops),
        ("linear+layernorm", grad::linear_and_layernorm),
        ("backward linearity", grad::backward_linearity),
        ("attention layers", grad::attention_layers),
        ("single block", grad::single_block_all_parameters),
        ("four-block stack", grad::four_block_stack),
        ("cfm loss", grad::cfm_loss_on_a_tiny_model),
    ];
    let mut worst = 0.0f64;
    for (name, f) in checks {
        worst = worst.max(f().map_err(|e| format!("{name}: {e}"))?);
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "worst rel err {worst:.2e} (tol {:.0e}, h {:.0e}, {} seeds) in {:.1?}",
        grad::TOL,
        grad::H,
        grad::SEEDS,
        start.elapsed()
    ))
}

fn fusion() -> Outcome {
    let mut r = rng(100);
    for _ in 0..200 {
        let k = r.gen_range(1..8);
        let counts: Vec<(usize, usize)> = (0..k).map(|_| (r.gen_range(1..5000), r.gen_range(0..5000))).collect();
        let w = FusionWeights::from_pixel_counts(&counts).map_err(|e| e.to_string())?;
        let total: f64 = w.weights().iter().sum();
        ensure((total - 1.0).abs() < 1e-12, || format!("weights sum to {total}"))?;
    }
    let mut worst_k1 = 0.0f64;
    let mut worst_dup = 0.0f64;
    let mut worst_perm = 0.0f64;
    for seed in 0..20 {
        let mut l = layer(8, 2, seed);
        let mut r = rng(seed + 1000);
        let z = Tensor::randn([5, 8], &mut r);
        let c = Tensor::randn([3, 8], &mut r);

        let fused = view_wise(&l, &z, &[c.clone()], &FusionWeights::single());
        let mut t = Tape::new();
        let (zv, cv) = (t.leaf(&z), t.leaf(&c));
        let ca = cross_attention(&mut t, &l.store, zv, cv, &l.ap).unwrap();
        let ln = l.ln.apply(&mut t, &l.store, ca).unwrap();
        worst_k1 = worst_k1.max(max_diff(&fused, t.value(ln)));

        let views: Vec<Tensor> = (0..4).map(|i| Tensor::randn([2 + i, 8], &mut r)).collect();
        let w = FusionWeights::from_ratios((0..4).map(|_| r.gen_range(0.05..1.0)).collect()).unwrap();
        let order = [3, 1, 0, 2];
        let permuted: Vec<Tensor> = order.iter().map(|&i| views[i].clone()).collect();
        let a = view_wise(&l, &z, &views, &w);
        let b = view_wise(&l, &z, &permuted, &w.permuted(&order));
        worst_perm = worst_perm.max(max_diff(&a, &b));

        let counts = [(120, 40), (0, 200), (30, 90)];
        let w = FusionWeights::from_pixel_counts(&counts).unwrap();
        let base = view_wise(&l, &z, &[views[0].clone(), views[1].clone(), views[2].clone()], &w);
        let swapped = view_wise(
            &l,
            &z,
            &[views[0].clone(), Tensor::randn([7, 8], &mut r), views[2].clone()],
            &w,
        );
        ensure(base == swapped, || {
            format!("seed {seed}: zero-visibility view changed the output")
        })?;

        l.ln.eps = 0.0;
        let w = FusionWeights::from_ratios(vec![0.7, 0.2, 0.4]).unwrap();
        let one = view_wise(&l, &z, &[c.clone()], &FusionWeights::single());
        let three = view_wise(&l, &z, &[c.clone(), c.clone(), c.clone()], &w);
        worst_dup = worst_dup.max(max_diff(&one, &three));
    }
    ensure(worst_k1 < 1e-12, || format!("K=1 reduction off by {worst_k1:e}"))?;
    ensure(worst_dup < 1e-12, || format!("duplicate views off by {worst_dup:e}"))?;
    ensure(worst_perm < 1e-10, || format!("permutation off by {worst_perm:e}"))?;
    Ok(format!(
        "sum 1e-12, K=1 {worst_k1:.1e}, duplicates {worst_dup:.1e}, permutation {worst_perm:.1e}, zero-visibility bit-identical"
    ))
}

fn gating() -> Outcome {
    let eps = 1e-6;
    let mut worst_uniform = 0.0f64;
    let mut worst_closed = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(seed + 2000);
        // Uniform gates: the MLP output ignores its input.
        let mut l = layer(8, 2, seed);
        l.store.get_mut(l.gp.w2).data_mut().fill(0.0);
        l.store.get_mut(l.gp.b2).data_mut()[0] = r.gen_range(-6.0..6.0);
        let z = Tensor::randn([4, 8], &mut r);
        let g = Tensor::randn([6, 8], &mut r);
        let mut t = Tape::new();
        let (zv, gv) = (t.leaf(&z), t.leaf(&g));
        let bias = gate_bias(&mut t, &l.store, gv, &l.gp, eps).unwrap();
        let gated = attention_probabilities(&mut t, &l.store, &l.ap, zv, gv, Some(bias)).unwrap();
        let plain = attention_probabilities(&mut t, &l.store, &l.ap, zv, gv, None).unwrap();
        for (a, b) in gated.iter().zip(&plain) {
            worst_uniform = worst_uniform.max(max_diff(t.value(*a), t.value(*b)));
        }

        // Equal logits: probabilities reduce to normalized gates.
        let mut l = layer(8, 2, seed + 1);
        l.store.get_mut(l.ap.wq).data_mut().fill(0.0);
        let n = r.gen_range(2..7);
        let geo = Tensor::randn([n, 8], &mut r);
        let mut t = Tape::new();
        let (zv, gv) = (t.leaf(&z), t.leaf(&geo));
        let gm = gating_mlp(&mut t, &l.store, gv, &l.gp).unwrap();
        let gates = t.value(gm).to_vec();
        let total: f64 = gates.iter().map(|g| g + eps).sum();
        let bias = gate_bias(&mut t, &l.store, gv, &l.gp, eps).unwrap();
        for p in attention_probabilities(&mut t, &l.store, &l.ap, zv, gv, Some(bias)).unwrap() {
            for row in t.value(p).chunks(n) {
                for (a, g) in row.iter().zip(&gates) {
                    worst_closed = worst_closed.max((a - (g + eps) / total).abs());
                }
            }
        }

        // Lowering one gate lowers the attention paid to its key.
        let l = layer(8, 2, seed + 2);
        let keys = Tensor::randn([5, 8], &mut r);
        let gates: Vec<f64> = (0..5).map(|_| r.gen_range(0.05..0.99)).collect();
        let j = r.gen_range(0..5);
        let mut lowered = gates.clone();
        lowered[j] *= r.gen_range(0.1..0.95);
        let probs = |gates: &[f64]| {
            let mut t = Tape::new();
            let (zv, kv) = (t.leaf(&z), t.leaf(&keys));
            let b = t.constant([5], gates.iter().map(|x| (x + eps).ln()).collect()).unwrap();
            let ps = attention_probabilities(&mut t, &l.store, &l.ap, zv, kv, Some(b)).unwrap();
            ps.iter().map(|p| t.value(*p).to_vec()).collect::<Vec<_>>()
        };
        for (b, a) in probs(&gates).iter().zip(&probs(&lowered)) {
            for row in 0..4 {
                ensure(a[row * 5 + j] < b[row * 5 + j], || {
                    format!("seed {seed}: gate {j} not monotone")
                })?;
            }
        }

        // No geometry tokens: the layer is the identity.
        let mut t = Tape::new();
        let zv = t.leaf(&z);
        let empty = t.constant([0, 8], vec![]).unwrap();
        let out = stereo_conditioned_cross_attention(&mut t, &l.store, zv, Some(empty), &l.ap, &l.gp, eps).unwrap();
        ensure(t.value(out) == z.data(), || "empty geometry changed the tokens".into())?;
    }
    ensure(worst_uniform < 1e-12, || {
        format!("uniform gates off by {worst_uniform:e}")
    })?;
    ensure(worst_closed < 1e-9, || format!("closed form off by {worst_closed:e}"))?;
    Ok(format!(
        "uniform {worst_uniform:.1e}, closed form {worst_closed:.1e}, monotone, identity at G=0"
    ))
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(300);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let phi = [4, 16, 64][case % 3];
        let n = r.gen_range(1..=1000);
        let pts = cloud(&mut r, n, 0.05);
        let grid = voxelize(&pts, phi).map_err(|e| e.to_string())?;
        let mut expected = VoxelGrid::new(phi);
        for p in &pts {
            let cell = p.map(|x| (0..phi).rev().find(|&i| x >= i as f64 / phi as f64 - 0.5).unwrap());
            expected.set(cell[0], cell[1], cell[2], true);
        }
        ensure(grid == expected, || format!("voxelize case {case}"))?;

        let cfg = OutlierFilter {
            radius: [1.0 / 64.0, 0.03, 0.1][case % 3],
            min_neighbors: r.gen_range(1..8),
            count_self: case % 2 == 0,
        };
        let kept = filter_outliers(&pts, &cfg);
        let want: Vec<P> = pts
            .iter()
            .copied()
            .filter(|&p| {
                let within = pts.iter().filter(|&&q| d2(p, q) <= cfg.radius * cfg.radius).count();
                let count = if cfg.count_self { within } else { within - 1 };
                count >= cfg.min_neighbors
            })
            .collect();
        ensure(kept == want, || format!("filter case {case}"))?;

        let n = r.gen_range(1..=1000);
        let other = cloud(&mut r, n, [0.005, 0.05, 0.5][case % 3]);
        for (mode, sq) in [(ChamferMode::Squared, true), (ChamferMode::Unsquared, false)] {
            let got = chamfer_with(&pts, &other, mode).unwrap();
            let want = chamfer_oracle(&pts, &other, sq);
            ensure(rel_close(got, want, 1e-12), || {
                format!("chamfer case {case}: {got} vs {want}")
            })?;
            worst = worst.max((got - want).abs() / want.abs().max(1e-300));
        }

        let sets = |r: &mut ChaCha8Rng, n: usize, size: usize| -> Vec<PointSample> {
            (0..n)
                .map(|_| {
                    let spread = r.gen_range(0.01..0.3);
                    PointSample {
                        points: cloud(r, size, spread),
                        padded: false,
                    }
                })
                .collect()
        };
        let (ng, nr, size) = (r.gen_range(1..=10), r.gen_range(1..=10), r.gen_range(1..=100));
        let g = sets(&mut r, ng, size);
        let rf = sets(&mut r, nr, size);
        let m: Vec<Vec<f64>> = g
            .iter()
            .map(|x| rf.iter().map(|y| chamfer_oracle(&x.points, &y.points, true)).collect())
            .collect();
        let want_mmd = (0..nr)
            .map(|j| m.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / nr as f64;
        let mut hit = vec![false; nr];
        for row in &m {
            hit[(0..nr).fold(0, |b, j| if row[j] < row[b] { j } else { b })] = true;
        }
        let want_cov = hit.iter().filter(|&&h| h).count() as f64 / nr as f64;
        let got_mmd = mmd(&g, &rf).unwrap();
        ensure(rel_close(got_mmd, want_mmd, 1e-12), || format!("mmd case {case}"))?;
        ensure(cov(&g, &rf).unwrap() == want_cov, || format!("cov case {case}"))?;
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "100 cases each, chamfer rel err {worst:.1e}, in {:.1?}",
        start.elapsed()
    ))
}

fn data_engine() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(400);
    for i in 0..60 {
        let mesh = procedural_shape(ShapeClass::ALL[i % 3], 0.3, 2, &mut r).unwrap();
        let target = r.gen_range(0.05..0.7);
        let face = r.gen_range(0..mesh.face_count());
        let l = grow_occlusion(&mesh, face, target, &mut r).map_err(|e| e.to_string())?;
        let max_frac = mesh.areas().iter().cloned().fold(0.0, f64::max) / mesh.total_area();
        ensure(is_connected(&mesh, &l), || format!("labeling {i} disconnected"))?;
        ensure(
            l.achieved_coverage >= target - 1e-9 && l.achieved_coverage <= target + max_frac + 1e-12,
            || format!("labeling {i}: {} for target {target}", l.achieved_coverage),
        )?;
    }

    let cfg = CorpusConfig {
        meshes: 12,
        views_per_mesh: 40,
        ..Default::default()
    };
    let meshes = procedural_meshes(cfg.meshes, &cfg, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    build_corpus(&meshes, &cfg, 11, dir.path()).map_err(|e| e.to_string())?;
    let corpus = Corpus::load(dir.path()).map_err(|e| e.to_string())?;
    let mut views = 0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (obj, entry) in corpus.objects.iter().zip(&corpus.manifest.objects) {
        for (v, e) in obj.views.iter().zip(&entry.views) {
            let m_o = Mask::load_pgm(&dir.path().join(&e.m_o)).map_err(|e| e.to_string())?;
            ensure(m_o.and(&v.m_v).is_empty(), || format!("{} overlaps", obj.id))?;
            ensure((0.2..=0.6).contains(&v.rate), || format!("rate {}", v.rate))?;
            lo = lo.min(v.rate);
            hi = hi.max(v.rate);
            views += 1;
        }
    }
    ensure(views >= 100, || format!("only {views} views"))?;

    let m = Mask::from_fn(128, 128, |r, c| (10..110).contains(&r) && (14..114).contains(&c));
    let e = erode(&m, 13);
    ensure(e == erode_oracle(&m, 13), || {
        "erosion disagrees with the window oracle".into()
    })?;
    let bb = e.bounding_box();
    ensure(bb == Some((16, 20, 103, 107)), || format!("eroded box {bb:?}"))?;
    Ok(format!(
        "60 labelings, {views} views with disjoint masks, rates in [{lo:.3}, {hi:.3}], box 88x88"
    ))
}

fn camera() -> Outcome {
    let mut worst = 0.0f64;
    for size in [96, 128, 256] {
        let cam = PinholeCamera {
            position: [0.0, 0.0, 2.0],
            look_at: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            fov_deg: 40.0,
            width: size,
            height: size,
        };
        let rend = render(&unit_cube(), &cam).map_err(|e| e.to_string())?;
        let f = 0.5 * size as f64 / 20f64.to_radians().tan();
        let expected = (f / 1.5).powi(2);
        let rel = (rend.silhouette().count() as f64 - expected).abs() / expected;
        ensure(rel < 0.02, || format!("{size}px silhouette off by {:.2}%", 100.0 * rel))?;
        worst = worst.max(rel);
    }
    let mut r = ChaCha8Rng::seed_from_u64(600);
    let mut replayed = 0;
    for i in 0..6 {
        let mesh = procedural_shape(ShapeClass::ALL[i % 3], 0.3, 2, &mut r).unwrap();
        let cam = PinholeCamera::orbit(r.gen_range(0.0..360.0), r.gen_range(-70.0..70.0), 2.0, 40.0, 64, 64);
        let rend = render(&mesh, &cam).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                if rend.face(row, col).is_none() {
                    continue;
                }
                let p = cam.back_project(row, col, rend.depth(row, col));
                let px = cam.project(p).pixel(64, 64);
                ensure(px == Some((row, col)), || format!("({row}, {col}) replays to {px:?}"))?;
                replayed += 1;
            }
        }
    }
    Ok(format!(
        "silhouette within {:.2}%, {replayed} pixels replayed exactly",
        100.0 * worst
    ))
}

fn views_cond() -> Conditioning {
    Conditioning::Views {
        features: vec![],
        weights: FusionWeights::single(),
        geometry: None,
    }
}

fn sampler() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(700);
    let n = 256;
    let f = LinearGaussianFlow {
        mean: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        null_mean: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        sigma: 0.3,
    };
    let cond = views_cond();
    let rms = |steps: usize| {
        let mut total = 0.0;
        for s in 0..20 {
            let eps = Tensor::randn([n], &mut ChaCha8Rng::seed_from_u64(s));
            let z = integrate(&f, eps.clone(), steps, 1.0, |_| &cond).unwrap();
            let exact = f.exact_endpoint(&eps, &cond);
            total += z.data().iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        }
        (total / 20.0).sqrt()
    };
    let (e12, e24) = (rms(12), rms(24));
    ensure(e12 < 0.15, || format!("12-step rms {e12}"))?;
    ensure(e12 / e24 >= 1.8, || format!("ratio {}", e12 / e24))?;
    let z = Tensor::randn([n], &mut r);
    let guided = guided_velocity(&f, &z, 0.6, &cond, 1.0).unwrap();
    ensure(guided == f.velocity(&z, 0.6, &cond).unwrap(), || {
        "scale 1 is not the conditional velocity".into()
    })?;
    Ok(format!(
        "rms {e12:.4} at 12 steps, ratio {:.3}, scale 1 exact",
        e12 / e24
    ))
}

/// Deterministic toy setup shared by the training criteria.
struct Toy {
    _dir: tempfile::TempDir,
    corpus: Corpus,
    model: ModelConfig,
    train: TrainConfig,
    /// Decode settings fixed by the pilot in docs/pilot.md.
    sample: SampleConfig,
}

fn toy() -> Toy {
    let cfg = CorpusConfig {
        test_fraction: 0.4,
        ..Default::default()
    };
    let meshes = procedural_meshes(60, &cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    build_corpus(&meshes, &cfg, 7, dir.path()).unwrap();
    let corpus = Corpus::load(dir.path()).unwrap();
    Toy {
        _dir: dir,
        corpus,
        model: ModelConfig::default(),
        train: TrainConfig {
            lr: 2e-3,
            lr_schedule: LrSchedule::Constant,
            batch: 8,
            steps: 2000,
            ..Default::default()
        },
        sample: SampleConfig {
            steps: 12,
            cfg_scale: 1.0,
            threshold: -0.5,
        },
    }
}

fn train(toy: &Toy, variant: Variant) -> (Trainer, Vec<StepLog>, Duration) {
    let (m, t) = variant.configure(&toy.model, &toy.train);
    let data = TrainSet::from_corpus(&toy.corpus, &m).unwrap();
    let hash = parse_hash(&toy.corpus.hash).unwrap();
    let mut trainer = Trainer::new(m, t, hash).unwrap();
    let start = Instant::now();
    let logs = trainer.run(&data, toy.train.steps as u64, None).unwrap();
    (trainer, logs, start.elapsed())
}

fn evaluate(toy: &Toy, trainer: &Trainer, variant: Variant, views: usize, sample: &SampleConfig) -> EvalReport {
    let cfg = EvalConfig {
        views,
        ..Default::default()
    };
    evaluate_model(
        &trainer.model,
        toy.corpus.split(Split::Test),
        variant.sequential(),
        sample,
        &cfg,
    )
    .unwrap()
}

fn mean_loss(logs: &[StepLog]) -> f64 {
    logs.iter().map(|l| l.loss).sum::<f64>() / logs.len() as f64
}

fn toy_training(toy: &Toy, full: &(Trainer, Vec<StepLog>, Duration), report: &EvalReport) -> Outcome {
    let (_, logs, elapsed) = full;
    let classes = ShapeClass::ALL
        .iter()
        .filter(|c| toy.corpus.objects.iter().any(|o| o.class == Some(**c)))
        .count();
    ensure(classes == 3, || format!("{classes} classes"))?;
    let early = mean_loss(&logs[..100]);
    let late = mean_loss(&logs[logs.len() - 100..]);
    let drop = 1.0 - late / early;
    ensure(drop >= 0.6, || {
        format!("loss {early:.4} -> {late:.4}, drop {:.1}%", 100.0 * drop)
    })?;
    let a = &report.aggregate;
    let (recall, iou) = (a.recall_mean.unwrap_or(0.0), a.iou_mean.unwrap_or(0.0));
    ensure(recall >= 0.8, || format!("recall {recall:.3}"))?;
    ensure(iou >= 0.5, || format!("IoU {iou:.3}"))?;
    within(*elapsed, Duration::from_secs(600))?;
    Ok(format!(
        "loss {early:.4} -> {late:.4} ({:.1}% drop), recall {recall:.3}, IoU {iou:.3} on {} objects, trained in {elapsed:.1?}",
        100.0 * drop,
        a.n
    ))
}

/// Mean of `a - b` over shared objects and a one-sided sign-flip p-value for mean(a) > mean(b).
fn paired(a: &EvalReport, b: &EvalReport) -> (usize, f64, f64) {
    let diffs: Vec<f64> = a
        .per_object
        .iter()
        .filter_map(|(id, m)| Some(m.chamfer? - b.per_object.get(id)?.chamfer?))
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let mut r = ChaCha8Rng::seed_from_u64(900);
    let trials = 20_000;
    let hits = (0..trials)
        .filter(|_| {
            let m = diffs
                .iter()
                .map(|d| if r.gen_bool(0.5) { *d } else { -*d })
                .sum::<f64>()
                / diffs.len() as f64;
            m >= mean
        })
        .count();
    (diffs.len(), mean, (hits + 1) as f64 / (trials + 1) as f64)
}

/// Both comparisons at the default sampler; `tuned` repeats them at the decode settings of the training criterion.
fn ordering(default: [&EvalReport; 3], tuned: [&EvalReport; 3]) -> Outcome {
    let describe = |[full4, full1, stereo4]: [&EvalReport; 3]| {
        let (n1, d1, p1) = paired(full4, stereo4);
        let (n2, d2, p2) = paired(full4, full1);
        let text = format!("full-(-stereo) {d1:+.5} (n {n1}, p {p1:.3}), 4 views-1 view {d2:+.5} (n {n2}, p {p2:.3})");
        (n1.min(n2), d1.max(d2), text)
    };
    let (n, worst, text) = describe(default);
    let (_, _, info) = describe(tuned);
    let detail = format!("{text}; at the training-criterion decode settings: {info}");
    ensure(n >= 20, || format!("too few paired objects: {detail}"))?;
    ensure(worst <= 0.0, || detail.clone())?;
    Ok(detail)
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(toy: &Toy, trained: &Trainer) -> Outcome {
    let cfg = CorpusConfig {
        meshes: 6,
        views_per_mesh: 8,
        ..Default::default()
    };
    let build = || {
        let meshes = procedural_meshes(cfg.meshes, &cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        build_corpus(&meshes, &cfg, 5, dir.path()).unwrap();
        dir
    };
    let (a, b) = (build(), build());
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    ensure(fa == fb, || "corpus builds differ".into())?;

    let small = ModelConfig {
        dim: 16,
        blocks: 2,
        heads: 2,
        time_features: 16,
        ..Default::default()
    };
    let corpus = Corpus::load(a.path()).unwrap();
    let hash = parse_hash(&corpus.hash).unwrap();
    let data = TrainSet::from_corpus(&corpus, &small).unwrap();
    let run = || {
        let t = TrainConfig {
            lr: 2e-3,
            batch: 2,
            steps: 5,
            ..Default::default()
        };
        let mut tr = Trainer::new(small.clone(), t, hash).unwrap();
        tr.run(&data, 5, None).unwrap();
        checkpoint_bytes(&tr)
    };
    ensure(run() == run(), || "checkpoints differ between runs".into())?;

    let bytes = checkpoint_bytes(trained);
    let path = a.path().join("model.agck");
    save_checkpoint(trained, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path, None).map_err(|e| e.to_string())?;
    ensure(checkpoint_bytes(&loaded) == bytes, || {
        "save/load is not bit-exact".into()
    })?;
    ensure(std::fs::read(&path).unwrap() == bytes, || {
        "file differs from serialized bytes".into()
    })?;
    let again = checkpoint_from_bytes(&bytes, Some(&parse_hash(&toy.corpus.hash).unwrap())).unwrap();

    let objects: Vec<&LoadedObject> = toy.corpus.split(Split::Test).take(4).collect();
    let filter = OutlierFilter::default();
    for (i, o) in objects.iter().enumerate() {
        let k = o.views.len().min(4);
        let g1 = generate(&trained.model, o, i as u64, k, false, &toy.sample, 0, &filter).unwrap();
        let g2 = generate(&again.model, o, i as u64, k, false, &toy.sample, 0, &filter).unwrap();
        ensure(g1.grid == g2.grid, || format!("{} sampled differently", o.id))?;
    }
    Ok(format!(
        "{} corpus files, checkpoints ({} bytes) and {} voxel outputs identical",
        fa.len(),
        bytes.len(),
        objects.len()
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, out: Outcome| match out {
        Ok(d) => println!("PASS [{n}] {name}: {d}"),
        Err(d) => {
            failed += 1;
            println!("FAIL [{n}] {name}: {d}");
        }
    };
    report(1, "finite-difference gradients", gradients());
    report(2, "view-wise fusion", fusion());
    report(3, "geometry gating", gating());
    report(4, "geometry oracles", geometry());
    report(5, "data engine", data_engine());
    report(6, "camera and rasterizer", camera());
    report(7, "flow sampler", sampler());

    let toy = toy();
    let full = train(&toy, Variant::Full);
    let full4 = evaluate(&toy, &full.0, Variant::Full, 4, &toy.sample);
    report(8, "toy training", toy_training(&toy, &full, &full4));
    let stereo = train(&toy, Variant::NoStereo);
    let defaults = SampleConfig::default();
    let default_reports = [
        evaluate(&toy, &full.0, Variant::Full, 4, &defaults),
        evaluate(&toy, &full.0, Variant::Full, 1, &defaults),
        evaluate(&toy, &stereo.0, Variant::NoStereo, 4, &defaults),
    ];
    let full1 = evaluate(&toy, &full.0, Variant::Full, 1, &toy.sample);
    let stereo4 = evaluate(&toy, &stereo.0, Variant::NoStereo, 4, &toy.sample);
    let [a, b, c] = &default_reports;
    report(9, "ablation ordering", ordering([a, b, c], [&full4, &full1, &stereo4]));
    report(10, "determinism", determinism(&toy, &full.0));

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
