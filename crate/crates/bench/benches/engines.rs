use std::hint::black_box;

use arw_core::idla::{run_point_idla, sample_killed_idla, sample_point_idla};
use arw_core::{
    default_step_cap, stabilize, stabilize_idla, Configuration, FiringPolicy, InstructionSource, Interval, Region,
    SleepRate,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn draws(c: &mut Criterion) {
    let src = InstructionSource::new(1, SleepRate::new(1.0).unwrap());
    let mut g = c.benchmark_group("draw");
    g.throughput(Throughput::Elements(1000));
    g.bench_function("1000 cells", |b| {
        b.iter(|| {
            let mut sleeps = 0u32;
            for k in 1..=1000 {
                sleeps += u32::from(src.draw(black_box(7), k).unwrap() == arw_core::Instruction::Sleep);
            }
            sleeps
        })
    });
    g.finish();
}

fn point_source(c: &mut Criterion) {
    let mut g = c.benchmark_group("stabilize point source");
    g.sample_size(10);
    for n in [100u32, 300] {
        let start = Configuration::point(0, n);
        let src = InstructionSource::new(2, SleepRate::new(1.0).unwrap());
        for (name, policy) in [("fifo", FiringPolicy::Fifo), ("lifo", FiringPolicy::Lifo)] {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| stabilize(&start, &src, Region::WholeLine, policy, default_step_cap(n as u64)))
            });
        }
    }
    g.finish();
}

fn idla(c: &mut Criterion) {
    let mut g = c.benchmark_group("idla");
    g.sample_size(10);
    let n = 500u32;
    let src = InstructionSource::new(3, SleepRate::new(1.0).unwrap());
    g.bench_function("engine 500", |b| {
        b.iter(|| stabilize_idla(&Configuration::point(0, n), &src, Region::WholeLine, default_step_cap(n as u64)))
    });
    g.bench_function("replay 500", |b| b.iter(|| run_point_idla(n as u64, &src).unwrap()));
    g.bench_function("exit law 10000", |b| b.iter(|| sample_point_idla(10_000, black_box(4))));
    let interval = Interval::centered(9001).unwrap();
    g.bench_function("killed exit law 10000", |b| b.iter(|| sample_killed_idla(10_000, interval, black_box(5)).unwrap()));
    g.finish();
}

criterion_group!(benches, draws, point_source, idla);
criterion_main!(benches);
