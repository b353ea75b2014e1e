use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use decel_lab::curves::{
    bnsl_eval, fit_curve, BnslParams, CurveSource, FitOptions, LossCurve, SmoothingConfig,
};
use decel_lab::interference::{coordinate_di, cucg_decompose, GradientMatrix, UpdateVector};
use decel_lab::trainer::{backward, build_model, per_token_grads, ModelConfig, TokenBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_curve(n: u64) -> LossCurve {
    let p = BnslParams::new(20f64.ln(), 0.2, -0.18, 8.6, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let steps: Vec<u64> = (1..=n).collect();
    let losses = steps
        .iter()
        .map(|&s| bnsl_eval(&p, s as f64).unwrap() * (1.0 + 0.02 * (rng.random::<f64>() - 0.5)))
        .collect();
    LossCurve::new(steps, losses, CurveSource::TrainBatch).unwrap()
}

fn bench_bnsl(c: &mut Criterion) {
    let curve = loss_curve(1 << 16);
    let cfg = SmoothingConfig::default();
    c.bench_function("fit_curve 65536 steps", |b| {
        b.iter(|| fit_curve(black_box(&curve), &cfg, None, &FitOptions::default()).unwrap())
    });
}

fn bench_interference(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, m) = (256, 20_000);
    let g = GradientMatrix::new(
        n,
        m,
        (0..n * m).map(|_| rng.random::<f64>() - 0.4).collect(),
    )
    .unwrap();
    let u = UpdateVector::new((0..m).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
    c.bench_function("cucg_decompose 256x20000", |b| {
        b.iter(|| cucg_decompose(black_box(&u), &g).unwrap())
    });
    c.bench_function("coordinate_di 256x20000", |b| {
        b.iter(|| coordinate_di(black_box(&g)))
    });
}

fn bench_model(c: &mut Criterion) {
    let cfg = ModelConfig {
        d_model: 64,
        n_layers: 2,
        n_heads: 2,
        mlp_dim: 256,
        seq_len: 64,
        ..ModelConfig::default()
    };
    let st = build_model(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let windows: Vec<Vec<u8>> = (0..8)
        .map(|_| (0..=64).map(|_| rng.random::<u8>()).collect())
        .collect();
    let batch = TokenBatch::from_windows(&windows).unwrap();

    let mut group = c.benchmark_group("model d64 L2 seq64 batch8");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| {
            st.model
                .forward_per_token(black_box(&st.params), &batch)
                .unwrap()
        })
    });
    group.bench_function("backward", |b| {
        b.iter(|| backward(black_box(&st), &batch, false).unwrap())
    });
    group.bench_function("backward with proxy", |b| {
        b.iter(|| backward(black_box(&st), &batch, true).unwrap())
    });
    let positions: Vec<(usize, usize)> = (0..32).map(|k| (k % 8, (k * 7) % 64)).collect();
    group.bench_function("per_token_grads 32 tokens", |b| {
        b.iter_batched(
            || positions.clone(),
            |pos| per_token_grads(&st, &batch, &pos).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_bnsl, bench_interference, bench_model);
criterion_main!(benches);
