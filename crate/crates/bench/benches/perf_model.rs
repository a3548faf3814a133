use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ternacc::perf::{
    estimate_decode_throughput, estimate_prefill_latency, simulate_layer, HardwareSpec, ModelSpec, Stage, Toggles,
};

fn layer(c: &mut Criterion) {
    let hw = HardwareSpec::default();
    let mut g = c.benchmark_group("simulate_layer");
    for name in ["2b", "13b"] {
        let model = ModelSpec::preset(name).unwrap();
        g.bench_with_input(BenchmarkId::new("decode", name), &model, |b, m| {
            b.iter(|| simulate_layer(black_box(m), &hw, Stage::Decode, 2048, Toggles::default()))
        });
        g.bench_with_input(BenchmarkId::new("prefill", name), &model, |b, m| {
            b.iter(|| simulate_layer(black_box(m), &hw, Stage::Prefill, 64, Toggles::default()))
        });
    }
    g.finish();
}

fn estimates(c: &mut Criterion) {
    let hw = HardwareSpec::default();
    let model = ModelSpec::preset("3b").unwrap();
    c.bench_function("decode_throughput_3b", |b| {
        b.iter(|| estimate_decode_throughput(black_box(&model), &hw, 2048, Toggles::default()))
    });
    c.bench_function("prefill_latency_3b", |b| {
        b.iter(|| estimate_prefill_latency(black_box(&model), &hw, 64, Toggles::default()))
    });
}

criterion_group!(benches, layer, estimates);
criterion_main!(benches);
