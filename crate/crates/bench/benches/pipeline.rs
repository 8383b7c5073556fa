use criterion::{criterion_group, criterion_main, Criterion};
use scaleprune_core::pipeline::LAST_FOUR_RATIOS;
use scaleprune_core::*;

fn pipeline(c: &mut Criterion) {
    let model = ToyModel::new(ModelConfig::default()).unwrap();
    let dense = ScaleSchedule::default_toy();
    let pruned = dense
        .clone()
        .with_last_ratios(
            &LAST_FOUR_RATIOS,
            PruneSpec::new(Strategy::StructureTexture, 0.0),
        )
        .unwrap();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("dense", |b| {
        b.iter(|| run_dense(&model, &dense, 0).unwrap())
    });
    g.bench_function("pruned", |b| {
        b.iter(|| run_pruned(&model, &pruned, 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
