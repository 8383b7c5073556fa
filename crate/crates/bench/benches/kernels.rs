use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaleprune_core::recovery::nearest_assignment;
use scaleprune_core::*;

fn grid(side: usize, c: usize) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(side as u64);
    FeatureGrid::from_fn(1, side, side, c, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn scoring(c: &mut Criterion) {
    let mut g = c.benchmark_group("scoring");
    for side in [16, 32, 64] {
        let x = grid(side, 64);
        let params = PruneParams::default();
        g.bench_with_input(BenchmarkId::new("structural", side), &x, |b, x| {
            b.iter(|| structural_score(black_box(x), &params).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("textural", side), &x, |b, x| {
            b.iter(|| textural_score(black_box(x)))
        });
    }
    g.finish();
}

fn selection(c: &mut Criterion) {
    let mut g = c.benchmark_group("joint_select");
    for ratio in [0.3, 0.7] {
        let x = grid(32, 64);
        let params = PruneParams::with_ratio(ratio);
        g.bench_with_input(BenchmarkId::from_parameter(ratio), &x, |b, x| {
            b.iter(|| joint_select(black_box(x), &params).unwrap())
        });
    }
    g.finish();
}

fn propagation(c: &mut Criterion) {
    let mut g = c.benchmark_group("nn_propagate");
    for side in [16, 32, 64] {
        let x = grid(side, 64);
        let (sparse, _) = joint_select(&x, &PruneParams::with_ratio(0.7)).unwrap();
        g.bench_with_input(BenchmarkId::new("assign", side), &sparse, |b, s| {
            b.iter(|| nearest_assignment(side, side, black_box(&s.kept_indices()[0])).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("propagate", side), &sparse, |b, s| {
            b.iter(|| nn_propagate(black_box(s)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, scoring, selection, propagation);
criterion_main!(benches);
