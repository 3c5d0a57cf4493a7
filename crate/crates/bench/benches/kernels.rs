use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use zsu_core::cluster::{kmeans_fit, KMeansConfig};
use zsu_core::corpus::synthetic::speech_like_utterance;
use zsu_core::dsp::stft;
use zsu_core::grad::{Graph, Padding, ParamStore, Tensor};
use zsu_core::metrics::{dtw, FrameDistance};
use zsu_core::{Matrix, StftConfig};

/// Deterministic, non-periodic filler values.
fn filler(rows: usize, cols: usize, phase: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|i| ((i as f64 + phase) * 0.618_033_988_7).sin() + 0.1 * (i as f64 * 1.3).cos())
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn bench_stft(c: &mut Criterion) {
    let audio = speech_like_utterance(1, 16_000);
    let cfg = StftConfig::speech(16_000);
    c.bench_function("stft_1.6s_16k", |b| {
        b.iter(|| stft(black_box(&audio), &cfg).unwrap())
    });
}

fn bench_dtw(c: &mut Criterion) {
    let a = filler(100, 39, 0.0);
    let x = filler(120, 39, 7.0);
    c.bench_function("dtw_cosine_100x120", |b| {
        b.iter(|| dtw(black_box(&a), black_box(&x), FrameDistance::Cosine).unwrap())
    });
}

fn bench_kmeans_encode(c: &mut Criterion) {
    let train = filler(4000, 39, 0.0);
    let cfg = KMeansConfig {
        minibatch_iters: 10,
        full_passes: 1,
        ..KMeansConfig::new(256, 0)
    };
    let model = kmeans_fit(&train, &cfg).unwrap().model;
    let frames = filler(1000, 39, 3.0);
    c.bench_function("kmeans_encode_1000x39_k256", |b| {
        b.iter(|| model.encode(black_box(&frames), 1).unwrap())
    });
}

fn bench_conv1d(c: &mut Criterion) {
    let x = filler(8 * 64, 128, 0.0).into_vec();
    let w = filler(64 * 64, 3, 5.0).into_vec();
    let mut store = ParamStore::new();
    let wid = store
        .add("w", Tensor::new(vec![64, 64, 3], w), true)
        .unwrap();
    c.bench_function("conv1d_fwd_bwd_8x64x128_k3", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.constant(Tensor::new(vec![8, 64, 128], x.clone()));
            let wv = g.param(&store, wid);
            let y = g.conv1d(xv, wv, None, 1, Padding::Same).unwrap();
            let l = g.sum(y);
            g.backward(l).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_stft,
    bench_dtw,
    bench_kmeans_encode,
    bench_conv1d
);
criterion_main!(benches);
