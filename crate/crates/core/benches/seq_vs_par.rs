use std::hint::black_box;

use canonsup::harness::{FamilyKind, InstanceFamily};
use canonsup::mc_sup::esup_mc_exec;
use canonsup::par::Execution;
use canonsup::{Driver, RandomStream};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn esup(c: &mut Criterion) {
    let set = InstanceFamily::new(FamilyKind::GaussianCloud { n: 16, m: 64, scale: 1.0 }, 1)
        .generate()
        .unwrap();
    let mut group = c.benchmark_group("esup_mc");
    group.sample_size(10);
    for driver in [Driver::Weibull(0.5), Driver::CondGaussian(1.0)] {
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let id = BenchmarkId::new(name, format!("{driver:?}"));
            group.bench_with_input(id, &driver, |b, d| {
                b.iter(|| esup_mc_exec(black_box(&set), d, 20_000, RandomStream::from_seed(0), exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, esup);
criterion_main!(benches);
