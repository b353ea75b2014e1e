//! One-dimensional per-token loss cross-sections along an update direction,
//! their linearization, correlation of actual and first-order changes, and a
//! quadratic sharpness fit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interference::{GradientMatrix, UpdateVector};
use crate::numeric::{self, CompensatedSum};
use crate::trainer::{Model, ParamSet, TokenBatch};

/// Per-token loss as a function of a flat parameter vector.
pub trait TokenLosses: Sync {
    fn n_params(&self) -> usize;
    fn n_tokens(&self) -> usize;
    fn token_losses(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

/// A model restricted to chosen `(sequence, position)` tokens of a batch.
pub struct ModelTokens<'a> {
    model: &'a Model,
    batch: TokenBatch,
    picks: Vec<usize>,
}

impl<'a> ModelTokens<'a> {
    /// Only the sequences holding a requested token are evaluated.
    pub fn new(model: &'a Model, batch: &TokenBatch, positions: &[(usize, usize)]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("no tokens selected"));
        }
        let mut seqs: Vec<usize> = positions.iter().map(|p| p.0).collect();
        seqs.sort_unstable();
        seqs.dedup();
        if let Some(&(b, s)) = positions
            .iter()
            .find(|&&(b, s)| b >= batch.n_seq() || s >= batch.seq())
        {
            return Err(Error::invalid(format!(
                "token ({b}, {s}) outside the batch"
            )));
        }
        let seq = batch.seq();
        let mut inputs = Vec::with_capacity(seqs.len() * seq);
        let mut targets = Vec::with_capacity(seqs.len() * seq);
        for &b in &seqs {
            inputs.extend_from_slice(batch.inputs(b));
            targets.extend_from_slice(batch.targets(b));
        }
        let sub = TokenBatch::new(seqs.len(), seq, inputs, targets)?;
        let picks = positions
            .iter()
            .map(|&(b, s)| seqs.binary_search(&b).expect("present") * seq + s)
            .collect();
        Ok(Self {
            model,
            batch: sub,
            picks,
        })
    }
}

impl TokenLosses for ModelTokens<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn n_tokens(&self) -> usize {
        self.picks.len()
    }

    fn token_losses(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let p = ParamSet::from_flat(self.model.layout().clone(), theta.to_vec())?;
        let all = self.model.forward_per_token(&p, &self.batch)?;
        Ok(self.picks.iter().map(|&k| all[k]).collect())
    }
}

/// Toy objective `ℓ_i(θ) = ‖θ − c_i‖² / 2`.
#[derive(Debug, Clone)]
pub struct QuadraticTokens {
    pub centers: Vec<Vec<f64>>,
}

impl TokenLosses for QuadraticTokens {
    fn n_params(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    fn n_tokens(&self) -> usize {
        self.centers.len()
    }

    fn token_losses(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .centers
            .iter()
            .map(|c| {
                let d: Vec<f64> = theta.iter().zip(c).map(|(a, b)| a - b).collect();
                0.5 * numeric::dot(&d, &d)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    /// Strictly increasing, containing 0.
    pub alphas: Vec<f64>,
    pub n_tokens: usize,
    /// `n_tokens x alphas.len()`, row-major.
    pub token_losses: Vec<f64>,
    /// `‖Δθ‖` before normalization; also where the actual update lands.
    pub direction_norm: f64,
    pub base_step: u64,
    /// Index in `alphas` of the sample at `direction_norm`, if included.
    pub marker: Option<usize>,
}

impl CrossSection {
    pub fn token_row(&self, i: usize) -> &[f64] {
        let n = self.alphas.len();
        &self.token_losses[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_tokens).map(|i| self.token_row(i)[j]).collect()
    }

    pub fn zero_index(&self) -> usize {
        self.alphas
            .iter()
            .position(|&a| a == 0.0)
            .expect("grid contains 0")
    }

    pub fn mean_losses(&self) -> Vec<f64> {
        (0..self.alphas.len())
            .map(|j| numeric::mean(&self.column(j)))
            .collect()
    }
}

/// `n` uniform points on `[lo, hi]`, with 0 and `extra` inserted if absent.
/// Returns the grid and the index of `extra`.
pub fn alpha_grid(
    lo: f64,
    hi: f64,
    n: usize,
    extra: Option<f64>,
) -> Result<(Vec<f64>, Option<usize>)> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || n < 2 {
        return Err(Error::invalid(format!("bad alpha grid {lo}:{hi}:{n}")));
    }
    let mut g: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    // Snap the near-zero point of a symmetric grid to exactly zero.
    for a in g.iter_mut() {
        if a.abs() < 1e-12 * (hi - lo) {
            *a = 0.0;
        }
    }
    let insert = |g: &mut Vec<f64>, v: f64| {
        if !g.contains(&v) {
            let k = g.partition_point(|&a| a < v);
            g.insert(k, v);
        }
    };
    insert(&mut g, 0.0);
    if let Some(e) = extra {
        if !e.is_finite() {
            return Err(Error::invalid("non-finite extra alpha"));
        }
        insert(&mut g, e);
    }
    let idx = extra.map(|e| g.iter().position(|&a| a == e).expect("inserted"));
    Ok((g, idx))
}

fn unit(direction: &UpdateVector) -> Result<(Vec<f64>, f64)> {
    let norm = direction.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("direction has zero norm".into()));
    }
    Ok((direction.values().iter().map(|v| v / norm).collect(), norm))
}

fn shifted(theta: &[f64], u: &[f64], alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        return theta.to_vec();
    }
    theta.iter().zip(u).map(|(t, d)| t + alpha * d).collect()
}

fn check_dims<F: TokenLosses + ?Sized>(
    f: &F,
    theta: &[f64],
    direction: &UpdateVector,
) -> Result<()> {
    if theta.len() != f.n_params() || direction.len() != f.n_params() {
        return Err(Error::invalid(format!(
            "objective has {} parameters; got theta {} and direction {}",
            f.n_params(),
            theta.len(),
            direction.len()
        )));
    }
    Ok(())
}

/// Per-token losses at `θ + α·û` for every `α`, `û = direction/‖direction‖`.
/// `theta` is only read; each sample is evaluated on its own copy.
pub fn cross_section<F: TokenLosses + ?Sized>(
    f: &F,
    theta: &[f64],
    direction: &UpdateVector,
    alphas: &[f64],
    base_step: u64,
) -> Result<CrossSection> {
    check_dims(f, theta, direction)?;
    if alphas.windows(2).any(|w| !(w[0] < w[1])) || !alphas.contains(&0.0) {
        return Err(Error::invalid(
            "alphas must be strictly increasing and contain 0",
        ));
    }
    let (u, norm) = unit(direction)?;
    let cols: Vec<Vec<f64>> = alphas
        .par_iter()
        .map(|&a| f.token_losses(&shifted(theta, &u, a)))
        .collect::<Result<_>>()?;
    let n_tokens = f.n_tokens();
    let na = alphas.len();
    let mut token_losses = vec![0.0; n_tokens * na];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            token_losses[i * na + j] = v;
        }
    }
    Ok(CrossSection {
        alphas: alphas.to_vec(),
        n_tokens,
        token_losses,
        direction_norm: norm,
        base_step,
        marker: alphas.iter().position(|&a| a == norm),
    })
}

/// `1e-3 · max(1, ‖θ‖ / √M)`.
pub fn default_h(theta: &[f64]) -> f64 {
    let scale = numeric::norm2(theta) / (theta.len().max(1) as f64).sqrt();
    1e-3 * scale.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linearization {
    pub h: f64,
    /// Directional derivative along `û` per token.
    pub slopes: Vec<f64>,
    /// Tokens whose loss difference is at the rounding level of the loss.
    pub underflow: Vec<bool>,
}

impl Linearization {
    /// `Δℓ̃(α) = α · slope` per token.
    pub fn predict(&self, alpha: f64) -> Vec<f64> {
        self.slopes.iter().map(|s| alpha * s).collect()
    }
}

/// Central-difference slope of each token's loss along `û`.
pub fn linearized_dl<F: TokenLosses + ?Sized>(
    f: &F,
    theta: &[f64],
    direction: &UpdateVector,
    h: f64,
) -> Result<Linearization> {
    check_dims(f, theta, direction)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h = {h} must be positive")));
    }
    let (u, _) = unit(direction)?;
    let up = f.token_losses(&shifted(theta, &u, h))?;
    let dn = f.token_losses(&shifted(theta, &u, -h))?;
    let mut underflow = Vec::with_capacity(up.len());
    let slopes = up
        .iter()
        .zip(&dn)
        .map(|(&a, &b)| {
            let diff = a - b;
            underflow.push(diff.abs() <= 8.0 * f64::EPSILON * a.abs().max(b.abs()));
            diff / (2.0 * h)
        })
        .collect();
    Ok(Linearization {
        h,
        slopes,
        underflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Set when either input has zero variance; `r` is then 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "pearson inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least 2 points"));
    }
    let (mx, my) = (numeric::mean(x), numeric::mean(y));
    let (mut sxy, mut sxx, mut syy) = (
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
    );
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if !(sxx > 0.0 && syy > 0.0) {
        return Ok(Pearson {
            r: 0.0,
            degenerate: true,
        });
    }
    Ok(Pearson {
        r: (sxy.value() / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessFit {
    pub c0: f64,
    pub c1: f64,
    /// Sharpness.
    pub c2: f64,
    pub window: (f64, f64),
    pub residual_rms: f64,
    /// Standard errors of `(c0, c1, c2)`; zero when the fit is exact-determined.
    pub std_errors: [f64; 3],
    pub n_points: usize,
}

/// Least-squares `y ≈ c0 + c1·α + c2·α²` over points with `α` in `window`.
pub fn quadratic_fit(alphas: &[f64], ys: &[f64], window: (f64, f64)) -> Result<SharpnessFit> {
    if alphas.len() != ys.len() {
        return Err(Error::invalid("alphas and values differ in length"));
    }
    let pts: Vec<(f64, f64)> = alphas
        .iter()
        .zip(ys)
        .filter(|(a, _)| (window.0..=window.1).contains(*a))
        .map(|(&a, &y)| (a, y))
        .collect();
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "quadratic fit needs 3 distinct alphas in [{}, {}], found {}",
            window.0,
            window.1,
            distinct.len()
        )));
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::invalid("non-finite loss in sharpness window"));
    }
    // Fit in s = α / scale to keep the design well conditioned.
    let scale = pts.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
    let n = pts.len();
    let x = DMatrix::from_fn(n, 3, |i, j| (pts[i].0 / scale).powi(j as i32));
    let y = DVector::from_iterator(n, pts.iter().map(|p| p.1));
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(&y, 1e-14)
        .map_err(|e| Error::invalid(format!("quadratic fit failed: {e}")))?;
    let resid = &y - &x * &beta;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let sigma2 = if n > 3 { rss / (n - 3) as f64 } else { 0.0 };
    let v_t = svd.v_t.as_ref().expect("v computed");
    let sv = &svd.singular_values;
    let mut std = [0.0; 3];
    for (k, s) in std.iter_mut().enumerate() {
        let var: f64 = (0..3).map(|r| (v_t[(r, k)] / sv[r]).powi(2)).sum::<f64>() * sigma2;
        *s = var.sqrt() / scale.powi(k as i32);
    }
    Ok(SharpnessFit {
        c0: beta[0],
        c1: beta[1] / scale,
        c2: beta[2] / (scale * scale),
        window,
        residual_rms: (rss / n as f64).sqrt(),
        std_errors: std,
        n_points: n,
    })
}

/// Quadratic fit to the token-mean loss over `window` (default: the whole grid).
pub fn sharpness(xs: &CrossSection, window: Option<(f64, f64)>) -> Result<SharpnessFit> {
    let w = window.unwrap_or((xs.alphas[0], *xs.alphas.last().expect("non-empty")));
    quadratic_fit(&xs.alphas, &xs.mean_losses(), w)
}

/// One fit per token.
pub fn sharpness_per_token(
    xs: &CrossSection,
    window: Option<(f64, f64)>,
) -> Result<Vec<SharpnessFit>> {
    let w = window.unwrap_or((xs.alphas[0], *xs.alphas.last().expect("non-empty")));
    (0..xs.n_tokens)
        .map(|i| quadratic_fit(&xs.alphas, xs.token_row(i), w))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderRow {
    pub h: f64,
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    pub pearson: f64,
}

/// Actual `Δℓ_i = ℓ_i(θ + hΔθ) − ℓ_i(θ)` against `h⟨Δθ, g_i⟩` for each scale.
pub fn first_order_check<F: TokenLosses + ?Sized>(
    f: &F,
    theta: &[f64],
    delta: &UpdateVector,
    grads: &GradientMatrix,
    hs: &[f64],
) -> Result<Vec<FirstOrderRow>> {
    check_dims(f, theta, delta)?;
    if grads.n_examples() != f.n_tokens() || grads.n_params() != f.n_params() {
        return Err(Error::invalid(
            "gradient matrix does not match the objective",
        ));
    }
    let base = f.token_losses(theta)?;
    let dots: Vec<f64> = grads
        .rows()
        .map(|g| numeric::dot(g, delta.values()))
        .collect();
    hs.iter()
        .map(|&h| {
            let moved = f.token_losses(&shifted(theta, delta.values(), h))?;
            let actual: Vec<f64> = moved.iter().zip(&base).map(|(a, b)| a - b).collect();
            let approx: Vec<f64> = dots.iter().map(|d| h * d).collect();
            let errs: Vec<f64> = actual
                .iter()
                .zip(&approx)
                .map(|(a, b)| (a - b).abs())
                .collect();
            Ok(FirstOrderRow {
                h,
                max_abs_err: errs.iter().copied().fold(0.0, f64::max),
                mean_abs_err: numeric::mean(&errs),
                pearson: pearson(&actual, &approx)?.r,
            })
        })
        .collect()
}
