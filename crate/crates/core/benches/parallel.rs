use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use darko_core::driver::DriverConfig;
use darko_core::eval::{load_template, make_stream, noise_sweep, run_and_evaluate, StreamConfig, SweepConfig};
use darko_core::irl::Estimator;
use darko_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn driver(c: &mut Criterion) {
    let (t, env) = load_template("office1").unwrap();
    let stream = make_stream(&t, &env, &StreamConfig { days: 1, ..Default::default() }).unwrap();
    let mut g = c.benchmark_group("driver_run");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = DriverConfig {
            hindsight: None,
            execution: exec,
            estimator: Estimator::MonteCarlo { rollouts: 64, seed: 0 },
            forecast_stride: 5,
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| b.iter(|| run_and_evaluate(&stream, &env, cfg).unwrap()));
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let cfg = SweepConfig { rates: vec![0.5], repeats: 4, stream: StreamConfig { days: 1, ..Default::default() }, ..Default::default() };
    let mut g = c.benchmark_group("noise_sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| noise_sweep("lab1", &cfg, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, driver, sweep);
criterion_main!(benches);
