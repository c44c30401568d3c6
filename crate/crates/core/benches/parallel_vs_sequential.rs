use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use waveblur::kernel::{make_field, KernelKind, KernelOperator, KernelSpec};
use waveblur::operator::LinearOperator;
use waveblur::theta::{build_theta, threshold_abs, Selection, WaveletOperator};
use waveblur::wavelet::Basis;
use waveblur::Grid;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = ThreadPoolBuilder::new().build().unwrap();
    let label = format!("default_{}", default.current_num_threads());
    vec![
        ("threads_1".to_string(), ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (label, default),
    ]
}

fn bench_build_theta(c: &mut Criterion) {
    let grid = Grid::square(32).unwrap();
    let field = make_field(&KernelSpec::new(KernelKind::GaussianRotation, grid).reference_size(64)).unwrap();
    let basis = Basis::daubechies(grid, 3, 4).unwrap();
    let mut group = c.benchmark_group("build_theta_n32");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| build_theta(&field, &basis).unwrap()))
        });
    }
    group.finish();
}

fn bench_apply(c: &mut Criterion) {
    let grid = Grid::square(64).unwrap();
    let field = make_field(&KernelSpec::new(KernelKind::GaussianIsotropic, grid).reference_size(64)).unwrap();
    let basis = Basis::daubechies(grid, 2, 4).unwrap();
    let theta = build_theta(&field, &basis).unwrap();
    let op = WaveletOperator::new(threshold_abs(&theta, Selection::Count(10 * grid.len())), basis).unwrap();
    let exact = KernelOperator::new(&field).unwrap();
    let u: Vec<f64> = (0..grid.len()).map(|i| ((i * 7919) % 251) as f64 / 250.0).collect();
    let mut group = c.benchmark_group("apply_n64");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("sparse_10N", &name), |b| {
            b.iter(|| pool.install(|| op.apply(&u)))
        });
        group.bench_function(BenchmarkId::new("kernel", &name), |b| {
            b.iter(|| pool.install(|| exact.apply(&u)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_build_theta, bench_apply);
criterion_main!(benches);
