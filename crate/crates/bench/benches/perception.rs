use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safeland::geometry::{CELL_FREE, CELL_OCCUPIED};
use safeland::nalgebra::Vector3;
use safeland::{
    euclidean_distance_transform, extract_slz, hungarian_assign, PerceptionPipeline, PipelineConfig, PlaneGrid,
    RigidTransform, SlzConfig,
};

fn grid(rng: &mut ChaCha8Rng, side: usize, p: f64) -> PlaneGrid {
    let values = (0..side * side)
        .map(|_| if rng.random_bool(p) { CELL_OCCUPIED } else { CELL_FREE })
        .collect();
    PlaneGrid::from_values(0.05, 0.05, 0.1, side, side, values).unwrap()
}

fn edt(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("edt");
    for side in [64, 128, 256] {
        let g = grid(&mut rng, side, 0.01);
        group.bench_with_input(BenchmarkId::from_parameter(side), &g, |b, g| {
            b.iter(|| euclidean_distance_transform(black_box(g)))
        });
    }
    group.finish();
}

fn slz(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SlzConfig::default();
    let mut group = c.benchmark_group("extract_slz");
    for side in [128, 256] {
        let g = grid(&mut rng, side, 0.005);
        group.bench_with_input(BenchmarkId::from_parameter(side), &g, |b, g| {
            b.iter(|| extract_slz(black_box(g), &cfg, 0))
        });
    }
    group.finish();
}

fn hungarian(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("hungarian");
    for n in [7, 32] {
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| hungarian_assign(black_box(cost)))
        });
    }
    group.finish();
}

fn frame(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let heads: Vec<(f64, f64)> = (0..100)
        .map(|_| (rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)))
        .collect();
    let cfg = PipelineConfig::default();
    let body = RigidTransform::from_translation(Vector3::new(-15.0, -15.0, -10.0));
    let wc = cfg.world_to_camera(&body).unwrap();
    let mut pipeline = PerceptionPipeline::new(cfg).unwrap();
    let density = pipeline.render_heads(&heads, &wc, 0).unwrap();
    c.bench_function("oracle_density_100_heads", |b| {
        b.iter(|| pipeline.render_heads(black_box(&heads), &wc, 0).unwrap())
    });
    let mut index = 0;
    c.bench_function("pipeline_frame_10m", |b| {
        b.iter(|| {
            index += 1;
            pipeline.process(black_box(&density), &wc, index).unwrap()
        })
    });
}

criterion_group!(benches, edt, slz, hungarian, frame);
criterion_main!(benches);
