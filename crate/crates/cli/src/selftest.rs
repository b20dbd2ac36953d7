use amodal_core::attention::{transformer_block, BlockConditioning, BlockOptions, BlockParams, FusionWeights};
use amodal_core::data::mesh::unit_cube;
use amodal_core::data::{build_corpus, procedural_meshes, render, CorpusConfig, PinholeCamera};
use amodal_core::flow::{integrate, Conditioning, LinearGaussianFlow};
use amodal_core::metrics::{chamfer_brute_force, chamfer_with, ChamferMode};
use amodal_core::tensor::{finite_diff_check_params, ParamStore, Tape, Tensor};
use amodal_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exit::{CliError, CliResult};

type Check = fn() -> Result<(bool, String)>;

pub fn run() -> CliResult<()> {
    let checks: [(&str, Check); 6] = [
        ("block gradients", block_gradients),
        ("fusion weights", fusion_weights),
        ("linear flow sampler", linear_flow),
        ("chamfer grid search", chamfer_grid),
        ("cube silhouette", cube_silhouette),
        ("corpus determinism", corpus_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} self-test check(s) failed")));
    }
    Ok(())
}

fn block_gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (dim, heads) = (8, 2);
    let mut store = ParamStore::new();
    let params = BlockParams::init(&mut store, "b", dim, heads, &mut rng)?;
    // Random weights everywhere so no branch is trivially zero.
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let z = Tensor::randn([5, dim], &mut rng);
    let views = [Tensor::randn([4, dim], &mut rng), Tensor::randn([3, dim], &mut rng)];
    let geo = Tensor::randn([3, dim], &mut rng);
    let weights = FusionWeights::from_ratios(vec![0.7, 0.3])?;
    let err = finite_diff_check_params(
        |tape: &mut Tape, store: &ParamStore| {
            let zv = tape.leaf(&z);
            let vs: Vec<_> = views.iter().map(|v| tape.leaf(v)).collect();
            let g = tape.leaf(&geo);
            let cond = BlockConditioning {
                views: &vs,
                weights: &weights,
                geo: Some(g),
            };
            let out = transformer_block(tape, store, zv, cond, &params, BlockOptions::default())?;
            let sq = tape.mul(out, out)?;
            Ok(tape.mean(sq))
        },
        &store,
        1e-5,
        None,
    )?;
    Ok((err < 1e-6, format!("max relative error {err:.2e}")))
}

fn fusion_weights() -> Result<(bool, String)> {
    let w = FusionWeights::from_pixel_counts(&[(30, 10), (10, 30), (0, 40)])?;
    let expected = [0.75, 0.25, 0.0];
    let ok = w.weights().iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12);
    Ok((ok, format!("weights {:?}", w.weights())))
}

fn linear_flow() -> Result<(bool, String)> {
    let f = LinearGaussianFlow {
        mean: vec![0.4, -0.3, 0.1, 0.8],
        null_mean: vec![0.0; 4],
        sigma: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = Tensor::randn([4], &mut rng);
    let cond = Conditioning::Null;
    let exact = f.exact_endpoint(&eps, &cond);
    let rms = |steps: usize| -> Result<f64> {
        let z = integrate(&f, eps.clone(), steps, 0.0, |_| &cond)?;
        let s: f64 = z.data().iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((s / exact.len() as f64).sqrt())
    };
    let (coarse, fine) = (rms(64)?, rms(128)?);
    let ratio = coarse / fine;
    Ok((
        fine < 1e-2 && (1.6..2.4).contains(&ratio),
        format!("endpoint rms {fine:.2e}, halving ratio {ratio:.2}"),
    ))
}

fn chamfer_grid() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut cloud = |n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    ]
                })
                .collect()
        };
        let (a, b) = (cloud(300), cloud(200));
        for mode in [ChamferMode::Squared, ChamferMode::Unsquared] {
            let fast = chamfer_with(&a, &b, mode)?;
            let slow = chamfer_brute_force(&a, &b, mode);
            worst = worst.max((fast - slow).abs() / slow.max(1e-12));
        }
    }
    Ok((worst < 1e-12, format!("max relative difference {worst:.1e}")))
}

fn cube_silhouette() -> Result<(bool, String)> {
    let cam = PinholeCamera {
        position: [0.0, 0.0, 2.0],
        look_at: [0.0; 3],
        up: [0.0, 1.0, 0.0],
        fov_deg: 40.0,
        width: 128,
        height: 128,
    };
    let r = render(&unit_cube(), &cam)?;
    let side = cam.focal_px() / 1.5;
    let expected = side * side;
    let got = r.silhouette().count() as f64;
    let rel = (got - expected).abs() / expected;
    Ok((rel < 0.02, format!("{got} px vs {expected:.1} analytic")))
}

fn corpus_determinism() -> Result<(bool, String)> {
    let cfg = CorpusConfig {
        meshes: 2,
        views_per_mesh: 4,
        ..CorpusConfig::default()
    };
    let dir = std::env::temp_dir().join(format!("agen-selftest-{}", std::process::id()));
    let build = |sub: &str| -> Result<String> {
        let sources = procedural_meshes(cfg.meshes, &cfg, 5)?;
        Ok(build_corpus(&sources, &cfg, 5, &dir.join(sub))?.hash())
    };
    let result = build("a").and_then(|a| Ok((a.clone(), build("b")?)));
    let _ = std::fs::remove_dir_all(&dir);
    let (a, b) = result?;
    Ok((a == b, format!("manifest {}", &a[..16])))
}
