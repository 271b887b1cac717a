use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qahsim::fitting::{fit_modes, FitConfig};
use qahsim::liouville::{build_liouvillian, eigensystem, quench_decomposition, EpTolerance};
use qahsim::sse::{ensemble_average, simulate_trajectory};
use qahsim::topology::{classify_transition, oracle_texture, ClassifyOptions};
use qahsim::MomentumGrid;
use qahsim_bench::{probe_momentum, schedule, weak};

fn sse(c: &mut Criterion) {
    let (p, w) = weak();
    let (k, sched) = (probe_momentum(), schedule());
    c.bench_function("trajectory_300_steps", |b| {
        b.iter(|| simulate_trajectory(k, &p, &w, &sched, black_box(1), 0).unwrap())
    });
    let mut g = c.benchmark_group("ensemble_average");
    g.sample_size(10);
    for n in [100usize, 1000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| ensemble_average(k, &p, &w, &sched, black_box(1), n).unwrap())
        });
    }
    g.finish();
}

fn liouville(c: &mut Criterion) {
    let (p, w) = weak();
    let l = build_liouvillian(probe_momentum(), &p, &w);
    let tol = EpTolerance::for_params(&p);
    c.bench_function("eigensystem", |b| b.iter(|| eigensystem(black_box(&l), &tol).unwrap()));
}

fn fitting(c: &mut Criterion) {
    let (p, w) = weak();
    let (k, sched) = (probe_momentum(), schedule());
    let traj = ensemble_average(k, &p, &w, &sched, 1, 1000).unwrap();
    let init = quench_decomposition(k, &p, &w).unwrap();
    let cfg = FitConfig::default();
    let mut g = c.benchmark_group("fit_modes");
    g.sample_size(10);
    g.bench_function("oracle_start", |b| {
        b.iter(|| fit_modes(black_box(&traj), Some(&init), &cfg).unwrap())
    });
    g.bench_function("cold_start", |b| b.iter(|| fit_modes(black_box(&traj), None, &cfg)));
    g.finish();
}

fn topology(c: &mut Criterion) {
    let (p, w) = weak();
    let opts = ClassifyOptions::standard();
    let grid = MomentumGrid::square(opts.kmin, opts.kmax, opts.texture_n).unwrap();
    let mut g = c.benchmark_group("topology");
    g.sample_size(10);
    g.bench_function("oracle_texture_61", |b| {
        b.iter(|| oracle_texture(&p, &w, &grid, &opts.times))
    });
    g.bench_function("classify_weak", |b| b.iter(|| classify_transition(&p, &w, &opts)));
    g.finish();
}

criterion_group!(benches, sse, liouville, fitting, topology);
criterion_main!(benches);
