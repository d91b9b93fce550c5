//! Monte-Carlo variance sweep on one worker versus a pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dbsurf::bench::{variance_sweep, Method, PGrid, SweepKind, SweepSpec};

fn spec(jobs: usize) -> SweepSpec {
    let mut s = SweepSpec::defaults(SweepKind::Variance);
    s.grid = PGrid { lo: 0.02, hi: 0.98, count: 25 };
    s.method = Method::Mc;
    s.mc_reps = 500;
    s.n_list = vec![4, 16];
    s.jobs = jobs;
    s
}

fn mc_sweep(c: &mut Criterion) {
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let mut group = c.benchmark_group("variance_sweep_mc");
    group.sample_size(10);
    for jobs in [1, workers] {
        let s = spec(jobs);
        group.bench_with_input(BenchmarkId::from_parameter(format!("jobs={jobs}")), &s, |b, s| {
            b.iter(|| variance_sweep(s).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mc_sweep);
criterion_main!(benches);
