use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ebnn::bitops::dot_bits;
use ebnn::{fold_bn, network_forward, reference_forward, BnParams, TempArena};
use ebnn_bench::{bit_rows, mnist_fixtures};

fn fused_vs_reference(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    for f in mnist_fixtures() {
        let mut arena = TempArena::for_network(&f.net).unwrap();
        let mut scores = vec![0.0; f.net.classes()];
        g.bench_function(BenchmarkId::new("fused", f.name), |b| {
            b.iter(|| network_forward(&f.net, f.input(), &mut arena, &mut scores).unwrap())
        });
        g.bench_function(BenchmarkId::new("reference", f.name), |b| {
            b.iter(|| reference_forward(&f.net, f.input.as_reference()).unwrap())
        });
    }
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let (a, b) = bit_rows(784, 9);
    c.bench_function("dot_bits/784 aligned", |bch| {
        bch.iter(|| dot_bits(black_box(a.as_bytes()), 0, black_box(b.as_bytes()), 0, 784))
    });
    c.bench_function("dot_bits/3 unaligned", |bch| {
        bch.iter(|| dot_bits(black_box(a.as_bytes()), 13, black_box(b.as_bytes()), 5, 3))
    });
    let bn = BnParams::new(-1.3, 0.4, 2.5, 7.0);
    c.bench_function("fold_bn", |bch| bch.iter(|| fold_bn(black_box(&bn)).unwrap()));
}

criterion_group!(benches, fused_vs_reference, kernels);
criterion_main!(benches);
