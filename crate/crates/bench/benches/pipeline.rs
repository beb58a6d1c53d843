use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kmsig_bench::{angle_frame, scenario, snapshots};
use kmsig_core::detector::run_frame;
use kmsig_core::{fit, Backend, FitOptions, WindowConfig};

fn fits(c: &mut Criterion) {
    let frame = angle_frame();
    let x = snapshots(&frame, 240);
    let opts = FitOptions::default();
    let mut group = c.benchmark_group("fit_240");
    for backend in Backend::ALL {
        group.bench_function(backend.as_str(), |b| {
            b.iter(|| fit(black_box(&x), backend, &opts).unwrap())
        });
    }
    group.finish();
}

fn detector(c: &mut Criterion) {
    let frame = angle_frame();
    let cfg = WindowConfig::default();
    c.bench_function("run_frame_dmd_kl", |b| {
        b.iter(|| run_frame(black_box(&frame), &cfg).unwrap())
    });
}

fn end_to_end(c: &mut Criterion) {
    let cfg = scenario();
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    group.bench_function("simulate_inject_detect", |b| b.iter(|| cfg.run().unwrap()));
    group.finish();
}

criterion_group!(benches, fits, detector, end_to_end);
criterion_main!(benches);
