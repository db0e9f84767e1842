use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aie_core::batch::{self, Execution};
use aie_core::pipeline::io::{truth_rows, SensorLog};
use aie_core::pipeline::{run_estimate, simulate_run, RunConfig};
use aie_core::sysid::{monte_carlo, MonteCarloSpec};
use aie_core::vehicle::yaw_params;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn sysid_monte_carlo(c: &mut Criterion) {
    let spec = MonteCarloSpec {
        truth: yaw_params(),
        input_level: 1.0,
        samples: 200,
        time_constants: 5.0,
        noise_fraction: 0.05,
        fixed_inertia: None,
    };
    let mut g = c.benchmark_group("sysid_monte_carlo");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 64), |b| {
            b.iter(|| monte_carlo(black_box(&spec), 64, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut config = RunConfig::default();
    config.simulator.horizon = 300.0 * config.sample_period;
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("simulate_estimate_sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, seeds.len()), |b| {
            b.iter(|| {
                batch::try_map(&seeds, exec, |&s| {
                    let run = simulate_run(&config, s)?;
                    let log = SensorLog {
                        path: PathBuf::from("bench"),
                        lines: (2..run.records.len() as u64 + 2).collect(),
                        records: run.records.clone(),
                    };
                    run_estimate(&config, &log, Some(&truth_rows(&run)))
                })
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, sysid_monte_carlo, seed_sweep);
criterion_main!(benches);
