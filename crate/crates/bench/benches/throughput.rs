use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ffattn_bench::{fixture, worker_counts};
use ffattn_core::{backward, forward, loss_and_gradients, PoolingMode};

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    for len in [100, 1000] {
        let (params, batch) = fixture(len, 100, 100, PoolingMode::Attention, 0).unwrap();
        group.throughput(Throughput::Elements((batch.batch_size() * batch.len()) as u64));
        for workers in worker_counts() {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
            group.bench_with_input(BenchmarkId::new(format!("T{len}"), workers), &workers, |b, _| {
                b.iter(|| {
                    pool.install(|| {
                        let cache = forward(&params, &batch).unwrap();
                        backward(&params, &batch, &cache).unwrap()
                    })
                })
            });
        }
    }
    group.finish();
}

fn fused_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradients");
    group.sample_size(10);
    for pooling in PoolingMode::ALL {
        let (params, batch) = fixture(500, 100, 100, pooling, 0).unwrap();
        group.throughput(Throughput::Elements((batch.batch_size() * batch.len()) as u64));
        group.bench_function(pooling.as_str(), |b| b.iter(|| loss_and_gradients(&params, &batch).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, forward_backward, fused_step);
criterion_main!(benches);
