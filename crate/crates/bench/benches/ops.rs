use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use privagg::default_field;
use privagg::transport::sim::Latency;
use privagg_bench::{throughput, BenchOp, Transport};

fn ops(c: &mut Criterion) {
    let mut group = c.benchmark_group("ops");
    group.sample_size(10);
    for op in BenchOp::ALL {
        let parallelism = if op == BenchOp::LessThan { 100 } else { 1000 };
        group.throughput(Throughput::Elements(parallelism as u64));
        group.bench_with_input(BenchmarkId::new(op.label(), parallelism), &parallelism, |b, &par| {
            b.iter(|| throughput(default_field(), op, par, 3, Transport::Simulator(Latency::None), 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ops);
criterion_main!(benches);
