use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use zdx_core::driver::{Driver, IidStep, MarkovDriver, Propagator};
use zdx_core::spectral::spectral_scan;
use zdx_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn propagation(c: &mut Criterion) {
    let driver: Driver = IidStep::lazy_2d().into();
    let mut g = c.benchmark_group("propagate_2d_256_steps");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut p = Propagator::new(&driver, 200, None, exec).unwrap();
                for _ in 0..256 {
                    p.advance();
                }
                p.total_mass()
            })
        });
    }
    g.finish();
}

fn scan(c: &mut Criterion) {
    let driver: Driver = MarkovDriver::three_state().into();
    let mut g = c.benchmark_group("spectral_scan_markov3_grid256");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| spectral_scan(&driver, 256, 0.5, exec).unwrap().gap)
        });
    }
    g.finish();
}

criterion_group!(benches, propagation, scan);
criterion_main!(benches);
