use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use natgrad_bench::StepFixture;
use natgrad_core::fisher::{gram_jacobian, layer_jacobian_explicit};
use natgrad_core::optim::compute_update;
use natgrad_core::{Method, OptimConfig};

fn updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("update");
    group.sample_size(20);
    for depth in [1, 2, 4] {
        let f = StepFixture::new(depth, 20, 8, 128);
        for method in Method::ALL {
            let cfg = OptimConfig::new(method, 1e-3).with_beta(1e-2);
            group.bench_with_input(BenchmarkId::new(method.name(), f.params()), &f, |b, f| {
                b.iter(|| compute_update(&f.net, black_box(&f.grads), &f.cache, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    for batch in [32, 128, 512] {
        let f = StepFixture::new(1, 20, 8, batch);
        let (i_l, g_l) = (f.cache.input(0), f.cache.output_grad(0).unwrap());
        group.bench_with_input(BenchmarkId::new("kernel_trick", batch), &batch, |b, _| {
            b.iter(|| gram_jacobian(black_box(i_l), black_box(g_l)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("explicit_jacobian", batch), &batch, |b, _| {
            b.iter(|| {
                let j = layer_jacobian_explicit(black_box(i_l), black_box(g_l)).unwrap();
                natgrad_core::linalg::matmul_nt(&j, &j).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, updates, gram);
criterion_main!(benches);
