//! Synthetic recovery of one-break BNSL fits: the generator is the oracle.

use decel_lab::curves::{
    bnsl_eval, bnsl_fit, bnsl_init, BnslParams, CurveSource, FitOptions, LossCurve,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn log_uniform_steps(n: usize, lo: f64, hi: f64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            (lo.ln() + f * (hi.ln() - lo.ln())).exp().round() as u64
        })
        .collect();
    v.dedup();
    v
}

fn synth(truth: &BnslParams, noise: Option<(f64, u64)>) -> LossCurve {
    let steps = log_uniform_steps(300, 100.0, (1u64 << 18) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.map_or(0, |n| n.1));
    let normal = Normal::new(0.0, noise.map_or(0.0, |n| n.0)).unwrap();
    let losses = steps
        .iter()
        .map(|&s| {
            let clean = bnsl_eval(truth, s as f64).unwrap();
            (clean.ln() + normal.sample(&mut rng)).exp()
        })
        .collect();
    LossCurve::new(steps, losses, CurveSource::TrainBatch).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn fields(p: &BnslParams) -> [f64; 5] {
    [p.log_b, p.c0, p.c1, p.log_d1, p.f1]
}

#[test]
fn noiseless_generator_recovered() {
    let truth = BnslParams::new(20f64.ln(), 0.2, -0.18, 8.6, 0.3);
    let curve = synth(&truth, None);
    let init = bnsl_init(&curve, None).unwrap();
    let fit = bnsl_fit(&curve, &init, &FitOptions::default()).unwrap();
    for (got, want) in fields(&fit.params).iter().zip(fields(&truth)) {
        assert!(rel(*got, want) < 0.01, "{got} vs {want}");
    }
    assert!(fit.rsle < 1e-6, "rsle {}", fit.rsle);
    assert_eq!(fit.params.a, 0.0);
}

// f1 is poorly determined at this noise level (standard error near 8% of its
// value), so it is checked against the fit's own uncertainty.
#[test]
fn noisy_generator_recovered() {
    let truth = BnslParams::new(20f64.ln(), 0.2, -0.18, 8.6, 0.3);
    for seed in 1..=5 {
        let curve = synth(&truth, Some((0.01, seed)));
        let init = bnsl_init(&curve, None).unwrap();
        let fit = bnsl_fit(&curve, &init, &FitOptions::default()).unwrap();
        assert!(
            (0.008..=0.012).contains(&fit.rsle),
            "seed {seed}: rsle {}",
            fit.rsle
        );
        let got = fields(&fit.params);
        let want = fields(&truth);
        assert!(rel(got[0], want[0]) < 0.10, "seed {seed}: log_b {}", got[0]);
        for k in 1..4 {
            assert!(
                rel(got[k], want[k]) < 0.05,
                "seed {seed}: param {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
        let std = fit.param_std.expect("covariance available");
        assert!(std.c0 > 0.0 && std.f1 > 0.0);
        assert!(
            (got[4] - want[4]).abs() < 3.0 * std.f1,
            "seed {seed}: f1 {} +- {}",
            got[4],
            std.f1
        );
    }
}

#[test]
fn random_noiseless_draws_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..100 {
        let truth = BnslParams::new(
            rng.random_range(2.0..3.5),
            rng.random_range(0.1..0.3),
            rng.random_range(-0.25..-0.05),
            rng.random_range(7.0..10.0),
            rng.random_range(0.1..0.8),
        );
        let curve = synth(&truth, None);
        let init = bnsl_init(&curve, None).unwrap();
        let fit = bnsl_fit(&curve, &init, &FitOptions::default())
            .unwrap_or_else(|e| panic!("draw {draw} {truth:?}: {e}"));
        for (k, (got, want)) in fields(&fit.params).iter().zip(fields(&truth)).enumerate() {
            assert!(
                rel(*got, want) < 0.01,
                "draw {draw} param {k}: {got} vs {want} ({truth:?})"
            );
        }
    }
}

// Per-seed error table for the noisy generator. Run with --ignored --nocapture.
#[test]
#[ignore]
fn noisy_stats() {
    let truth = BnslParams::new(20f64.ln(), 0.2, -0.18, 8.6, 0.3);
    for seed in 1..=30 {
        let curve = synth(&truth, Some((0.01, seed)));
        let init = bnsl_init(&curve, None).unwrap();
        let fit = bnsl_fit(&curve, &init, &FitOptions::default()).unwrap();
        let got = fields(&fit.params);
        let errs: Vec<String> = (0..5)
            .map(|k| format!("{:.4}", rel(got[k], fields(&truth)[k])))
            .collect();
        println!(
            "seed {seed} rsle {:.5} errs {:?} std {:?}",
            fit.rsle,
            errs,
            fit.param_std.map(|s| (s.c1, s.f1))
        );
    }
}

#[test]
fn points_before_min_step_are_ignored() {
    let truth = BnslParams::new(20f64.ln(), 0.2, -0.18, 8.6, 0.3);
    let clean = synth(&truth, None);
    // A warmup-like plateau the law cannot describe.
    let mut steps: Vec<u64> = (1..100).collect();
    let mut losses = vec![40.0; 99];
    steps.extend_from_slice(clean.steps());
    losses.extend_from_slice(clean.losses());
    let curve = LossCurve::new(steps, losses, CurveSource::TrainBatch).unwrap();
    let opts = FitOptions {
        min_step: 100,
        ..FitOptions::default()
    };
    let init = bnsl_init(&curve.from_step(100), None).unwrap();
    let fit = bnsl_fit(&curve, &init, &opts).unwrap();
    assert_eq!(fit.n_points_used, clean.len());
    assert!(fit.rsle < 1e-6);
    let all = bnsl_fit(&curve, &init, &FitOptions::default());
    assert!(all.map_or(true, |f| f.rsle > 1e-2));
}
