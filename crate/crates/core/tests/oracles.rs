mod common;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use scaleprune_core::flops::{flop_count, layer_flops};
use scaleprune_core::metrics::{gaussian_kernel, ssim_window, SSIM_K1, SSIM_K2};
use scaleprune_core::pipeline::LAST_FOUR_RATIOS;
use scaleprune_core::scoring::init_direction;
use scaleprune_core::*;

use common::*;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

/// Gaussian 64x32 with one planted dominant direction.
fn planted(seed: u64, strength: f64) -> Array2<f64> {
    let mut r = rng(seed);
    let u: Vec<f64> = (0..32).map(|_| r.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = Array2::from_shape_simple_fn((64, 32), || r.sample::<f64, _>(StandardNormal));
    for i in 0..64 {
        let a: f64 = r.sample::<f64, _>(StandardNormal) * strength;
        for j in 0..32 {
            x[[i, j]] += a * u[j] / norm;
        }
    }
    explicit_center(&x)
}

#[test]
fn power_iteration_converges_on_dominant_spectrum() {
    for seed in 0..5 {
        let x = planted(seed, 8.0);
        let (v, l1, l2) = leading_eigen(&x);
        assert!(l2 / l1 < 0.2);
        let g = FeatureGrid::from_tokens(x, 8, 8).unwrap();
        let pd = first_principal_direction(&g, 20, seed).unwrap();
        let got = pd.directions.row(0).to_vec();
        assert!(
            cos(&got, &v) >= 1.0 - 1e-6,
            "seed {seed}: {}",
            cos(&got, &v)
        );
    }
}

#[test]
fn structural_score_matches_eigen_projection() {
    let x = planted(9, 8.0);
    let (v, _, _) = leading_eigen(&x);
    let g = FeatureGrid::from_tokens(x.clone(), 8, 8).unwrap();
    let params = PruneParams {
        power_iters: 50,
        ..PruneParams::default()
    };
    let s = structural_score(&g, &params).unwrap();
    for i in 0..64 {
        let expect: f64 = x
            .row(i)
            .iter()
            .zip(&v)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        assert!((s.values()[[0, i]] - expect).abs() < 1e-4);
    }
}

#[test]
fn init_direction_is_unit_and_row_dependent() {
    let a = init_direction(3, 0, 16);
    let b = init_direction(3, 1, 16);
    assert!((a.dot(&a) - 1.0).abs() < 1e-12);
    assert_ne!(a, b);
    assert_eq!(a, init_direction(3, 0, 16));
}

#[test]
fn centering_matches_explicit_mean_removal() {
    let mut r = rng(1);
    let g = uniform_grid(&mut r, 1, 5, 7, 3);
    let c = center_tokens(&g);
    let e = explicit_center(&g.row(0).to_owned());
    for (a, b) in c.row(0).iter().zip(e.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn anchor_copy_matches_brute_force() {
    let mut r = rng(2);
    let x = uniform_grid(&mut r, 1, 6, 6, 3);
    let anchors = anchor_grid(6, 6, 3).unwrap();
    assert_eq!(anchors, vec![0, 3, 18, 21]);
    let scores = l2norm_score(&x);
    let (sel, _) = select_with(Strategy::L2norm, &x, &PruneParams::with_ratio(0.7)).unwrap();
    let sel = force_include(&x, &sel, &scores, &anchors).unwrap();
    let kept = sel.kept_indices()[0].clone();
    assert!(anchors.iter().all(|a| kept.contains(a)));
    let out = anchor_copy(&sel, &anchors).unwrap();
    let nearest = brute_voronoi(6, 6, &anchors);
    for i in 0..36 {
        let src = if kept.contains(&i) {
            i
        } else {
            anchors[nearest[i]]
        };
        assert_eq!(out.token(0, i), x.token(0, src));
    }
}

#[test]
fn anchor_corners_on_4x4() {
    let x = FeatureGrid::from_fn(1, 4, 4, 1, |(_, l, _)| l as f64).unwrap();
    let anchors = anchor_grid(4, 4, 3).unwrap();
    assert_eq!(anchors, vec![0, 3, 12, 15]);
    let sparse = gather_tokens(&x, &[anchors.clone()]).unwrap();
    let out = anchor_copy(&sparse, &anchors).unwrap();
    let got: Vec<f64> = out.row(0).iter().copied().collect();
    assert_eq!(
        got,
        vec![0., 0., 3., 3., 0., 0., 3., 3., 12., 12., 15., 15., 12., 12., 15., 15.]
    );
}

/// Direct per-window SSIM, no separable filtering.
fn ssim_loop(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (h, w) = a.dim();
    let (size, sigma) = ssim_window(h, w);
    let k1 = gaussian_kernel(size, sigma);
    let (lo, hi) = a
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, u), &v| (l.min(v), u.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let (c1, c2) = ((SSIM_K1 * range).powi(2), (SSIM_K2 * range).powi(2));
    let mut total = 0.0;
    let mut n = 0.0;
    for r in 0..=h - size {
        for c in 0..=w - size {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let wt = k1[i] * k1[j];
                    let (x, y) = (a[[r + i, c + j]], b[[r + i, c + j]]);
                    ma += wt * x;
                    mb += wt * y;
                    aa += wt * x * x;
                    bb += wt * y * y;
                    ab += wt * x * y;
                }
            }
            let num = (2.0 * ma * mb + c1) * (2.0 * (ab - ma * mb) + c2);
            let den = (ma * ma + mb * mb + c1) * (aa - ma * ma + bb - mb * mb + c2);
            total += num / den;
            n += 1.0;
        }
    }
    total / n
}

#[test]
fn ssim_matches_window_loop() {
    let mut r = rng(3);
    for (h, w) in [(16, 16), (13, 20), (6, 9)] {
        let a = uniform_grid(&mut r, 1, h, w, 3);
        let b = a.map(|v| v + 0.3 * (v * 7.0).sin()).unwrap();
        let mean = |g: &FeatureGrid| {
            Array2::from_shape_fn((h, w), |(i, j)| g.row(0).row(i * w + j).mean().unwrap())
        };
        let expect = ssim_loop(&mean(&a), &mean(&b));
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-6);
    }
}

#[test]
fn psnr_hand_value() {
    // range 2, mse 0.25 -> 10 log10(16)
    let a = FeatureGrid::from_fn(1, 2, 2, 1, |(_, l, _)| [0.0, 2.0, 1.0, 1.0][l]).unwrap();
    let b = a.map(|v| v + 0.5).unwrap();
    assert!((psnr(&a, &b).unwrap() - 10.0 * 16f64.log10()).abs() < 1e-12);
}

#[test]
fn flop_speedup_hand_derivation() {
    let cfg = ModelConfig::default();
    let c = cfg.channels as u64;
    let per = |n: u64, cache: u64| {
        cfg.depth as u64 * (2 * n * (n + cache) * c + 4 * n * c * c + 2 * n * c * 4 * c)
    };
    let sides = [1u64, 2, 4, 8, 12, 16, 24, 32];
    let (mut dense, mut cache) = (0, 0);
    for s in sides {
        dense += per(s * s, cache);
        cache += s * s;
    }
    let dense_schedule = ScaleSchedule::default_toy();
    assert_eq!(flop_count(&dense_schedule, &cfg).unwrap().total, dense);

    // last four: 0.4 -> 86 of 144, 0.5 -> 128 of 256, then two skips
    let mut pruned = 0;
    cache = 0;
    for (i, s) in sides.iter().enumerate() {
        let n = match i {
            4 => 86,
            5 => 128,
            6 | 7 => 0,
            _ => s * s,
        };
        pruned += if n == 0 { 0 } else { per(n, cache) };
        cache += n;
    }
    let schedule = dense_schedule
        .with_last_ratios(
            &LAST_FOUR_RATIOS,
            PruneSpec::new(Strategy::StructureTexture, 0.0),
        )
        .unwrap();
    let f = flop_count(&schedule, &cfg).unwrap();
    assert_eq!(f.total, pruned);
    let kept: Vec<usize> = f.scales.iter().map(|s| s.processed).collect();
    assert_eq!(kept, vec![1, 4, 16, 64, 86, 128, 0, 0]);
    assert_eq!(layer_flops(&cfg, 0, 5, 0), 0);
}

#[test]
fn pruned_run_trace_follows_schedule() {
    let model = ToyModel::new(ModelConfig {
        channels: 16,
        ..ModelConfig::default()
    })
    .unwrap();
    let schedule = ScaleSchedule::default_toy()
        .with_last_ratios(
            &LAST_FOUR_RATIOS,
            PruneSpec::new(Strategy::StructureTexture, 0.0),
        )
        .unwrap();
    let run = run_pruned(&model, &schedule, 0).unwrap();
    let kept: Vec<usize> = run.trace.iter().map(|t| t.kept).collect();
    assert_eq!(kept, vec![1, 4, 16, 64, 86, 128, 0, 0]);
    assert_eq!(
        run.total_flops(),
        flop_count(&schedule, model.config()).unwrap().total
    );
    assert_eq!(run.final_output().shape(), (1, 32, 32, 16));
}
