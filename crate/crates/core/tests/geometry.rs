mod common;

use amodal_core::geometry::{filter_outliers, voxelize, voxelize_clamped, OutlierFilter, VoxelGrid};
use amodal_core::metrics::{
    chamfer_matrix, chamfer_with, cov, evaluate_pairs, fps, mmd, mmd_permille, partial_recall, ChamferMode, EvalPair,
    EvalPointConfig, PointSample,
};
use common::oracle::{chamfer_oracle, cloud, d2, rel_close, P};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn voxelize_matches_interval_search() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let phi = [4, 16, 64][case % 3];
        let n = r.gen_range(1..=1000);
        let mut pts = cloud(&mut r, n, 0.05);
        // Points exactly on cell boundaries and on the cube faces.
        pts.push([-0.5, 0.5, 0.0]);
        pts.push([1.0 / phi as f64 - 0.5, 0.25, -0.25]);
        let grid = voxelize(&pts, phi).unwrap();
        let mut expected = VoxelGrid::new(phi);
        for p in &pts {
            let cell = p.map(|x| (0..phi).rev().find(|&i| x >= i as f64 / phi as f64 - 0.5).unwrap());
            expected.set(cell[0], cell[1], cell[2], true);
        }
        assert_eq!(grid, expected, "case {case}");
        assert_eq!(voxelize_clamped(&pts, phi), expected);
    }
    assert!(voxelize(&[[0.6, 0.0, 0.0]], 8).is_err());
}

#[test]
fn filter_outliers_matches_neighbor_counting() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let n = r.gen_range(1..=1000);
        let pts = cloud(&mut r, n, 0.03);
        let cfg = OutlierFilter {
            radius: [1.0 / 64.0, 0.03, 0.1][case % 3],
            min_neighbors: r.gen_range(1..8),
            count_self: case % 2 == 0,
        };
        let kept = filter_outliers(&pts, &cfg);
        let expected: Vec<P> = pts
            .iter()
            .copied()
            .filter(|&p| {
                let others = pts.iter().filter(|&&q| d2(p, q) <= cfg.radius * cfg.radius).count() - 1;
                let count = if cfg.count_self { others + 1 } else { others };
                count >= cfg.min_neighbors
            })
            .collect();
        assert_eq!(kept, expected, "case {case}");
    }
}

#[test]
fn isolated_points_are_removed() {
    let mut pts: Vec<P> = (0..6).map(|i| [0.001 * i as f64, 0.0, 0.0]).collect();
    pts.push([0.4, 0.4, 0.4]);
    let kept = filter_outliers(&pts, &OutlierFilter::default());
    assert_eq!(kept, pts[..6]);
}

#[test]
fn chamfer_matches_quadratic_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let na = r.gen_range(1..=1000);
        let nb = r.gen_range(1..=1000);
        let spread = [0.005, 0.05, 0.5][case % 3];
        let a = cloud(&mut r, na, spread);
        let b = cloud(&mut r, nb, spread);
        for (mode, sq) in [(ChamferMode::Squared, true), (ChamferMode::Unsquared, false)] {
            let got = chamfer_with(&a, &b, mode).unwrap();
            let want = chamfer_oracle(&a, &b, sq);
            assert!(rel_close(got, want, 1e-12), "case {case}: {got} vs {want}");
        }
    }
}

#[test]
fn chamfer_on_lattice_ties() {
    // Many equidistant neighbours stress the early-exit bound.
    let grid: Vec<P> = (0..512)
        .map(|i| [(i % 8) as f64 / 8.0, ((i / 8) % 8) as f64 / 8.0, (i / 64) as f64 / 8.0])
        .collect();
    let shifted: Vec<P> = grid
        .iter()
        .map(|p| [p[0] + 1.0 / 16.0, p[1], p[2] + 1.0 / 16.0])
        .collect();
    let got = chamfer_with(&grid, &shifted, ChamferMode::Squared).unwrap();
    assert_eq!(got, chamfer_oracle(&grid, &shifted, true));
}

fn sets(r: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<PointSample> {
    (0..n)
        .map(|_| {
            let spread = r.gen_range(0.01..0.3);
            PointSample {
                points: cloud(r, size, spread),
                padded: false,
            }
        })
        .collect()
}

#[test]
fn mmd_and_cov_match_exhaustive_loops() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let (ng, nr, size) = (r.gen_range(1..=10), r.gen_range(1..=10), r.gen_range(1..=120));
        let g = sets(&mut r, ng, size);
        let rf = sets(&mut r, nr, size);
        let m: Vec<Vec<f64>> = g
            .iter()
            .map(|x| rf.iter().map(|y| chamfer_oracle(&x.points, &y.points, true)).collect())
            .collect();
        let mut want_mmd = 0.0;
        for j in 0..rf.len() {
            let mut best = f64::INFINITY;
            for row in &m {
                best = best.min(row[j]);
            }
            want_mmd += best;
        }
        want_mmd /= rf.len() as f64;
        let mut counts = vec![0usize; rf.len()];
        for row in &m {
            let best = (0..rf.len()).fold(0, |b, j| if row[j] < row[b] { j } else { b });
            counts[best] += 1;
        }
        let want_cov = counts.iter().filter(|&&c| c > 0).count() as f64 / rf.len() as f64;

        let got = chamfer_matrix(&g, &rf).unwrap();
        for (gr, wr) in got.iter().zip(&m) {
            for (x, y) in gr.iter().zip(wr) {
                assert!(rel_close(*x, *y, 1e-12));
            }
        }
        assert!(rel_close(mmd(&g, &rf).unwrap(), want_mmd, 1e-12), "case {case}");
        assert_eq!(cov(&g, &rf).unwrap(), want_cov, "case {case}");
    }
}

#[test]
fn mmd_and_cov_examples() {
    let a = PointSample {
        points: vec![[0.0; 3]],
        padded: false,
    };
    let at = |x: f64| PointSample {
        points: vec![[x, 0.0, 0.0]],
        padded: false,
    };
    // Chamfer of single points is twice the squared distance.
    let g = [at(1.0 / 2f64.sqrt()), at(2.0 / 2f64.sqrt())];
    assert!((mmd(&g, &[a.clone()]).unwrap() - 1.0).abs() < 1e-12);
    assert!((mmd_permille(&g, &[a.clone()]).unwrap() - 1000.0).abs() < 1e-9);
    let refs = [at(0.0), at(0.3), at(0.9)];
    assert_eq!(mmd(&refs, &refs).unwrap(), 0.0);
    assert_eq!(cov(&refs, &refs).unwrap(), 1.0);
    assert_eq!(cov(&[at(0.01), at(-0.2)], &refs).unwrap(), 1.0 / 3.0);
}

#[test]
fn fps_beats_random_subsets() {
    let min_pair = |pts: &[P]| {
        let mut m = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                m = m.min(d2(pts[i], pts[j]));
            }
        }
        m
    };
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let n = r.gen_range(20..200);
        let pts = cloud(&mut r, n, 0.1);
        let s = r.gen_range(2..8);
        let picked = fps(&pts, s, case).unwrap();
        let ours = min_pair(&picked.points);
        let mut best = 0.0f64;
        for _ in 0..1000 {
            let idx = rand::seq::index::sample(&mut r, n, s);
            let subset: Vec<P> = idx.iter().map(|i| pts[i]).collect();
            best = best.max(min_pair(&subset));
        }
        // Greedy max-min is a 2-approximation of the optimum dispersion.
        assert!(ours.sqrt() >= 0.5 * best.sqrt(), "case {case}: {ours} vs {best}");
    }
}

#[test]
fn fps_full_size_is_a_permutation() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let pts = cloud(&mut r, 300, 0.2);
    let s = fps(&pts, 300, 9).unwrap();
    let key = |p: &P| p.map(f64::to_bits);
    let mut a: Vec<_> = s.points.iter().map(key).collect();
    let mut b: Vec<_> = pts.iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert_eq!(fps(&pts, 300, 9).unwrap(), s);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_translation_invariant(seed in any::<u64>(), shift in prop::array::uniform3(-2.0f64..2.0)) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = cloud(&mut r, 60, 0.1);
        let b = cloud(&mut r, 40, 0.1);
        let ab = chamfer_with(&a, &b, ChamferMode::Squared).unwrap();
        let ba = chamfer_with(&b, &a, ChamferMode::Squared).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(rel_close(ab, ba, 1e-12));
        let mv = |c: &[P]| c.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect::<Vec<_>>();
        let moved = chamfer_with(&mv(&a), &mv(&b), ChamferMode::Squared).unwrap();
        prop_assert!((moved - ab).abs() < 1e-9);
        prop_assert_eq!(chamfer_with(&a, &a, ChamferMode::Squared).unwrap(), 0.0);
    }

    #[test]
    fn recall_counts_overlap(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut cond = VoxelGrid::new(16);
        let mut gen = VoxelGrid::new(16);
        for _ in 0..200 {
            let c = [0; 3].map(|_| r.gen_range(0..16));
            cond.set(c[0], c[1], c[2], true);
            let c = [0; 3].map(|_| r.gen_range(0..16));
            gen.set(c[0], c[1], c[2], true);
        }
        let hit = cond.active().filter(|c| gen.get(c[0], c[1], c[2])).count();
        prop_assert_eq!(partial_recall(&gen, &cond, false).unwrap(), hit as f64 / cond.count() as f64);
        prop_assert!(partial_recall(&gen, &cond, true).unwrap() >= partial_recall(&gen, &cond, false).unwrap());
        prop_assert_eq!(partial_recall(&gen.union(&cond).unwrap(), &cond, false).unwrap(), 1.0);
    }
}

#[test]
fn eval_aggregate_matches_per_object_entries() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let block = |r: &mut ChaCha8Rng| {
        let lo = [0; 3].map(|_| r.gen_range(4..20));
        let hi = lo.map(|v| v + r.gen_range(4..12));
        let mut g = VoxelGrid::new(32);
        for i in lo[0]..hi[0] {
            for j in lo[1]..hi[1] {
                for k in lo[2]..hi[2] {
                    g.set(i, j, k, true);
                }
            }
        }
        g
    };
    let pairs: Vec<EvalPair> = (0..5)
        .map(|i| {
            let target = block(&mut r);
            let generated = block(&mut r);
            let conditioning = block(&mut r);
            EvalPair {
                id: format!("obj{i}"),
                generated,
                target,
                conditioning,
            }
        })
        .collect();
    let cfg = EvalPointConfig {
        sample_size: 256,
        ..Default::default()
    };
    let report = evaluate_pairs(&pairs, &cfg, false).unwrap();
    let objs: Vec<_> = report.per_object.values().collect();
    let chamfers: Vec<f64> = objs.iter().filter_map(|o| o.chamfer).collect();
    let chamfer = chamfers.iter().sum::<f64>() / chamfers.len() as f64;
    let iou = objs.iter().map(|o| o.iou).sum::<f64>() / objs.len() as f64;
    let agg = &report.aggregate;
    assert_eq!(agg.n, pairs.len());
    assert!((agg.chamfer_mean.unwrap() - chamfer).abs() < 1e-12);
    assert!((agg.iou_mean.unwrap() - iou).abs() < 1e-12);
    let recalls: Vec<f64> = objs.iter().filter_map(|o| o.recall).collect();
    assert!((agg.recall_mean.unwrap() - recalls.iter().sum::<f64>() / recalls.len() as f64).abs() < 1e-12);
    for p in &pairs {
        let o = &report.per_object[&p.id];
        assert_eq!(
            o.recall,
            Some(partial_recall(&p.generated, &p.conditioning, false).unwrap())
        );
        assert_eq!(o.iou, p.generated.iou(&p.target).unwrap());
    }
    assert_eq!(report.to_json(), evaluate_pairs(&pairs, &cfg, false).unwrap().to_json());
}
