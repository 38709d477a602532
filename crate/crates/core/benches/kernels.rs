//! Hot kernels on a one-thread pool against a pool sized to the machine.
//!
//! `cargo bench -p sainet-core` runs both; add `--no-default-features` to
//! measure the sequential build, where pool size has no effect.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sainet::datagen::estimate_disparity_blockmatch;
use sainet::imageproc::{canny, CannyParams};
use sainet::network::{UNet, UNetConfig};
use sainet::synthetic::{render_scene, SyntheticSceneParams};
use sainet::tensor::{conv2d, partial_conv2d};
use sainet::Tensor;

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes.into_iter().map(|n| (n, rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap())).collect()
}

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// Tensors are single-threaded handles, so each iteration rebuilds its
// inputs inside the pool from plain buffers. The copy is small next to the
// kernel.
fn bench_conv(c: &mut Criterion) {
    let (n, cin, cout, hw, k) = (2, 16, 32, 64, 3);
    let x = random(n * cin * hw * hw, 1);
    let w = random(cout * cin * k * k, 2);
    let m: Vec<f64> = random(n * hw * hw, 3).into_iter().map(|v| f64::from(v > -0.3)).collect();
    let mut g = c.benchmark_group("conv");
    for (threads, pool) in pools() {
        g.bench_function(BenchmarkId::new("conv2d", threads), |b| {
            b.iter(|| {
                pool.install(|| {
                    let x = Tensor::new(x.clone(), &[n, cin, hw, hw]).unwrap();
                    let w = Tensor::new(w.clone(), &[cout, cin, k, k]).unwrap();
                    black_box(conv2d(&x, &w, None, 1, 1).unwrap().numel())
                })
            })
        });
        g.bench_function(BenchmarkId::new("partial_conv2d", threads), |b| {
            b.iter(|| {
                pool.install(|| {
                    let x = Tensor::new(x.clone(), &[n, cin, hw, hw]).unwrap();
                    let w = Tensor::new(w.clone(), &[cout, cin, k, k]).unwrap();
                    let m = Tensor::new(m.clone(), &[n, 1, hw, hw]).unwrap();
                    black_box(partial_conv2d(&x, &m, &w, None, 2, 1).unwrap().output.numel())
                })
            })
        });
    }
    g.finish();
}

fn bench_unet(c: &mut Criterion) {
    let cfg = UNetConfig { depth: 3, base_channels: 16, ..Default::default() };
    let (n, hw) = (2, 64);
    let x = random(n * 8 * hw * hw, 4);
    let mut g = c.benchmark_group("unet");
    g.sample_size(10);
    for (threads, pool) in pools() {
        g.bench_function(BenchmarkId::new("forward_backward", threads), |b| {
            b.iter(|| {
                pool.install(|| {
                    let net = UNet::new(cfg.clone()).unwrap();
                    let x = Tensor::new(x.clone(), &[n, 8, hw, hw]).unwrap();
                    let m = Tensor::new(vec![1.0; n * hw * hw], &[n, 1, hw, hw]).unwrap();
                    let loss = net.forward(&x, &m).unwrap().mean();
                    loss.backward().unwrap();
                    black_box(loss.item())
                })
            })
        });
    }
    g.finish();
}

fn bench_image(c: &mut Criterion) {
    let scene = render_scene(&SyntheticSceneParams { width: 160, height: 120, ..Default::default() }, 0);
    let mut g = c.benchmark_group("image");
    g.sample_size(20);
    for (threads, pool) in pools() {
        g.bench_function(BenchmarkId::new("canny", threads), |b| {
            b.iter(|| pool.install(|| black_box(canny(&scene.left, &CannyParams::default()).unwrap())))
        });
        g.bench_function(BenchmarkId::new("blockmatch", threads), |b| {
            b.iter(|| pool.install(|| black_box(estimate_disparity_blockmatch(&scene, 32, 9).unwrap().disparity.width)))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_conv, bench_unet, bench_image);
criterion_main!(benches);
