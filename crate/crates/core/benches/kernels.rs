//! Convolution and full-model timings on a single-thread rayon pool against
//! the default pool. Build with `--no-default-features` to time the plain
//! sequential loops instead (the "threads" dimension then makes no difference).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsfcn::grad::{conv2d_forward, Graph, Tensor};
use dsfcn::model::{build_fcn, FcnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f32> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![
        ("1".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("default_{}", default.current_num_threads()), default),
    ]
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[4, 16, 64, 64]);
    let w = random(&mut rng, &[32, 16, 3, 3]);
    let b = random(&mut rng, &[32]);

    let mut group = c.benchmark_group("conv2d_3x3_16to32_64px_batch4");
    for (threads, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("forward", &threads), &pool, |bench, pool| {
            bench.iter(|| pool.install(|| conv2d_forward(&x, &w, Some(&b), 1, 1).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", &threads), &pool, |bench, pool| {
            bench.iter(|| {
                pool.install(|| {
                    let mut g = Graph::new();
                    let (xv, wv, bv) = (g.input(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
                    let y = g.conv2d(xv, wv, bv, 1, 1).unwrap();
                    let loss = g.sum(y).unwrap();
                    g.backward(loss).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = build_fcn(FcnConfig::stage1(), 3).unwrap();
    let batch = random(&mut rng, &[1, 1, 128, 128]);

    let mut group = c.benchmark_group("stage1_forward_128px");
    group.sample_size(20);
    for (threads, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(&threads), &pool, |bench, pool| {
            bench.iter(|| pool.install(|| net.forward(&batch).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, model);
criterion_main!(benches);
