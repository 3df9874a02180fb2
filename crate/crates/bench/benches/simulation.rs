use std::hint::black_box;

use aimcsim::system::simulate_jobs;
use aimcsim::{simulate, RunOptions};
use aimcsim_bench::{arch, data_parallel_plan, full_jobs, pipelining_plan, wired, wireless};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn ima_jobs(c: &mut Criterion) {
    let a = arch(1, wired(256.0));
    let jobs = full_jobs(64);
    c.bench_function("ima/64_jobs", |b| b.iter(|| simulate_jobs(&a, 0, black_box(&jobs)).unwrap()));
}

fn data_parallel(c: &mut Criterion) {
    let mut g = c.benchmark_group("data_parallel");
    for n in [4u32, 16] {
        let plan = data_parallel_plan(n);
        for (label, ic) in [("wired-64", wired(64.0)), ("wireless-256", wireless(256.0))] {
            let a = arch(n, ic);
            g.bench_with_input(BenchmarkId::new(label, n), &plan, |b, plan| {
                b.iter(|| simulate(&a, plan, RunOptions::default()).unwrap().tot_exec_cycles)
            });
        }
    }
    g.finish();
}

fn pipelining(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipelining");
    g.sample_size(20);
    for n in [2u32, 8] {
        let plan = pipelining_plan(n);
        let a = arch(n, wired(256.0));
        let opts = RunOptions {
            iterations: 4,
            ..RunOptions::default()
        };
        g.bench_with_input(BenchmarkId::new("wired-256", n), &plan, |b, plan| {
            b.iter(|| simulate(&a, plan, opts).unwrap().tot_exec_cycles)
        });
    }
    g.finish();
}

criterion_group!(benches, ima_jobs, data_parallel, pipelining);
criterion_main!(benches);
