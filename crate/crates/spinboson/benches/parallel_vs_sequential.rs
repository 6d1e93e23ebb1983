//! Rayon pool vs single-threaded dispatch on the three map-shaped workloads:
//! detuned-ensemble averaging, calibration scans, and four-point quadrature.
//! Run with `cargo bench`, or `cargo bench --no-default-features` to confirm
//! the sequential fallback costs nothing extra.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spinboson::correlation::corr4_numeric;
use spinboson::exec::{map_indexed, Execution};
use spinboson::models::{DissipationKind, OscillatorMode, SpinParams};
use spinboson::pulses::calibrate_motion_freq_scan;
use spinboson::stochastic::{run_detuned_ensemble, DetunedScenario};

const STRATEGIES: [(&str, Execution); 2] =
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_ensemble(c: &mut Criterion) {
    let mode = OscillatorMode { nu: 1.0, kappa: 0.1, gamma: 0.25, nbar: 0.0, fock_dim: 8 };
    let scenario =
        DetunedScenario::new(SpinParams { epsilon: 0.0, delta: 1.0 }, vec![mode], 10.0, 50)
            .unwrap();
    let mut group = c.benchmark_group("detuned_ensemble_24x50");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_detuned_ensemble(&scenario, 24, 7, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_calibration(c: &mut Criterion) {
    let grid: Vec<f64> = (0..21).map(|i| -0.3 + 0.03 * i as f64).collect();
    let mut group = c.benchmark_group("motion_freq_scan_21pt");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| calibrate_motion_freq_scan(&grid, 1.5, 32, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_four_point(c: &mut Criterion) {
    let mode = OscillatorMode { nu: 1.0, kappa: 0.1, gamma: 0.4, nbar: 0.2, fock_dim: 10 };
    let ts: Vec<f64> = (0..12).map(|i| 0.5 + 0.5 * i as f64).collect();
    let mut group = c.benchmark_group("four_point_grid_12pt");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                map_indexed(exec, ts.len(), |i| {
                    corr4_numeric(&mode, DissipationKind::Damped, ts[i], ts[i], 0.0, 0.0).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_ensemble, bench_calibration, bench_four_point);
criterion_main!(benches);
