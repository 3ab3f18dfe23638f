use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use homer_bench::{bench_schema, model, request};
use homer_core::data::JaggedBatch;
use homer_core::model::{ModelConfig, Variant};
use homer_core::serving::{predict_pointwise, predict_request, DEFAULT_SHARD_SIZE};

fn forward(c: &mut Criterion) {
    let schema = bench_schema();
    let mut group = c.benchmark_group("forward");
    for variant in [Variant::Full, Variant::Pointwise] {
        let m = model(ModelConfig { variant, ..Default::default() });
        let params = m.init_params::<f32>().unwrap();
        let samples: Vec<_> = (0..32).map(|i| request(&schema, 50, 10, i)).collect();
        let batch = JaggedBatch::from_samples(&samples);
        group.throughput(Throughput::Elements(samples.len() as u64));
        group.bench_function(BenchmarkId::new("batch32_n50_k10", variant.name()), |b| b.iter(|| m.forward(&params, &batch).unwrap()));
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let schema = bench_schema();
    let m = model(ModelConfig::default());
    let params = m.init_params::<f32>().unwrap();
    let samples: Vec<_> = (0..32).map(|i| request(&schema, 50, 10, i)).collect();
    let batch = JaggedBatch::from_samples(&samples);
    c.bench_function("loss_and_grads/batch32_n50_k10", |b| b.iter(|| m.loss_and_grads(&params, &batch).unwrap()));
}

fn serving(c: &mut Criterion) {
    let schema = bench_schema();
    let m = model(ModelConfig::default());
    let params = m.init_params::<f32>().unwrap();
    let mut group = c.benchmark_group("serving_n100");
    group.sample_size(20);
    for k in [4usize, 32, 128] {
        let s = request(&schema, 100, k, k as u64);
        group.throughput(Throughput::Elements(k as u64));
        group.bench_with_input(BenchmarkId::new("set_wise", k), &s, |b, s| {
            b.iter(|| predict_request(&m, &params, s, DEFAULT_SHARD_SIZE).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("point_wise", k), &s, |b, s| b.iter(|| predict_pointwise(&m, &params, s).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, forward, train_step, serving);
criterion_main!(benches);
