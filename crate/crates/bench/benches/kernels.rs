use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use expsparse::data::sample_manifold;
use expsparse::sparsifier::{estimate_thresholds, sparsify_topk, TieRule};
use expsparse::{EasApproximator, ManifoldSpec, ProjectionMatrix, RowDistribution};

const N: usize = 20;

fn inputs(count: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_manifold(&ManifoldSpec::random_trig(1, N, 3), count, seed)
        .unwrap()
        .points
}

fn projection(c: &mut Criterion) {
    let u = inputs(1, 1).remove(0);
    let mut group = c.benchmark_group("project");
    for d in [1024, 8192] {
        let w = ProjectionMatrix::sample(N, d, RowDistribution::default_gaussian(N), 7).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &w, |b, w| {
            b.iter(|| w.project(black_box(&u)))
        });
    }
    group.finish();
}

fn topk(c: &mut Criterion) {
    let w = ProjectionMatrix::sample(N, 8192, RowDistribution::default_gaussian(N), 7).unwrap();
    let p = w.project(&inputs(1, 1)[0]).unwrap();
    c.bench_function("topk/d=8192,k=32", |b| {
        b.iter(|| sparsify_topk(black_box(&p), 32, TieRule::LowestIndex, false))
    });
}

fn thresholds(c: &mut Criterion) {
    let w = ProjectionMatrix::sample(N, 2048, RowDistribution::default_gaussian(N), 7).unwrap();
    let cal = inputs(5000, 2);
    let mut group = c.benchmark_group("estimate_thresholds");
    group.sample_size(10);
    group.bench_function("d=2048,S=5000", |b| {
        b.iter(|| estimate_thresholds(&w, black_box(&cal), 32))
    });
    group.finish();
}

fn predict(c: &mut Criterion) {
    let w = ProjectionMatrix::sample(N, 4096, RowDistribution::default_gaussian(N), 7).unwrap();
    let train = inputs(5000, 2);
    let ys: Vec<f64> = train.iter().map(|u| u[0]).collect();
    let tau = estimate_thresholds(&w, &train, 32).unwrap();
    let model = EasApproximator::fit(w, tau, &train, &ys).unwrap();
    let u = inputs(1, 9).remove(0);
    c.bench_function("predict/d=4096,k=32", |b| {
        b.iter(|| model.predict_or_mean(black_box(&u)))
    });
}

criterion_group!(benches, projection, topk, thresholds, predict);
criterion_main!(benches);
