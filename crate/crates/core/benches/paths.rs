use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use snlse_core::exec::{map_paths, parallel_enabled};
use snlse_core::{
    integrate, strong_error, BrownianPath, Complex64, ErrorConfig, QWienerSpec, ReferenceDriver, SchemeKind,
    SchemeParams, SobolevIndex, SpectralGrid,
};

fn workers() -> Vec<usize> {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut w = vec![1];
    if parallel_enabled() {
        w.push(available.max(2));
    }
    w
}

fn path_batches(c: &mut Criterion) {
    let grid = SpectralGrid::new(64).unwrap();
    let spec = QWienerSpec::power_decay(8.0, 0.3).unwrap();
    let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.01, spec.clone()).unwrap();
    let u0 = grid.sample(|x| Complex64::new(2.0 / (2.0 - x.cos()), 0.0)).unwrap();
    let mut group = c.benchmark_group("integrate_batch");
    group.sample_size(10);
    for w in workers() {
        group.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| {
                map_paths(16, w, |m| {
                    let path = BrownianPath::sample(&spec, &grid, 1, m as u64, 0.01, 100).unwrap();
                    integrate(&u0, &path, &params, 100, 1, 100).unwrap().last().sobolev_norm(SobolevIndex::H1)
                })
            })
        });
    }
    group.finish();
}

fn coupled_error(c: &mut Criterion) {
    let grid = SpectralGrid::new(32).unwrap();
    let spec = QWienerSpec::power_decay(8.0, 0.3).unwrap();
    let params = SchemeParams::new(SchemeKind::Snrli1, 1.0, 0.01, spec).unwrap();
    let u0 = grid.sample(|x| Complex64::new(2.0 / (2.0 - x.cos()), 0.0)).unwrap();
    let reference = ReferenceDriver::fine_snrli1(0.001);
    let mut group = c.benchmark_group("strong_error");
    group.sample_size(10);
    for w in workers() {
        let config = ErrorConfig { num_paths: 16, workers: w, ..ErrorConfig::default() };
        group.bench_with_input(BenchmarkId::from_parameter(w), &config, |b, config| {
            b.iter(|| strong_error(&params, &reference, config, &[0.02, 0.01], 0.2, &u0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, path_batches, coupled_error);
criterion_main!(benches);
