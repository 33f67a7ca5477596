use criterion::{criterion_group, criterion_main, Criterion};
use ebnn::codegen::{generate, CodegenOptions};
use ebnn::dataio::synth_separable;
use ebnn::screening::{enumerate, Family, SearchSpace, DEFAULT_BUDGET};
use ebnn::{memory_report, presets, train, InputSpec, TrainConfig};

fn screening(c: &mut Criterion) {
    let mut g = c.benchmark_group("enumerate");
    g.sample_size(10);
    for family in [Family::Mlp1, Family::Conv1, Family::ConvPool1] {
        let space = SearchSpace::mnist(family, DEFAULT_BUDGET);
        g.bench_function(family.name(), |b| b.iter(|| enumerate(&space).unwrap()));
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let data = synth_separable(64, 4, 400, 1).unwrap();
    let arch = presets::mlp(InputSpec::real(1, 1, 64), &[32], 4).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("mlp 64-32-4, 400 samples, 1 epoch", |b| {
        b.iter(|| train(&arch, &data, &cfg).unwrap())
    });
    g.finish();
}

fn tooling(c: &mut Criterion) {
    let net = ebnn_bench::randomized(presets::fig4(4, 8).unwrap(), 4);
    c.bench_function("memory_report/fig4", |b| b.iter(|| memory_report(&net).unwrap()));
    c.bench_function("codegen/fig4", |b| {
        b.iter(|| generate(&net, &CodegenOptions::default(), &[]).unwrap())
    });
}

criterion_group!(benches, screening, training, tooling);
criterion_main!(benches);
