//! Pre-norm decoder-only transformer over bytes with a tied output head.
//!
//! Weights are stored `[in, out]` so a linear map is `y = x · W + b` on
//! row-major `[positions, in]` activations.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::batch::TokenBatch;
use super::config::ModelConfig;
use super::gemm::gemm;
use super::params::{Layout, ParamSet};
use super::proxy::{ProxyAccumulator, ProxyTensor};
use crate::error::{Error, Result};
use crate::interference::GradientMatrix;
use crate::numeric::CompensatedSum;

const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
/// Upper bound on rows requested from [`Model::per_token_grads`].
pub const PER_TOKEN_CAP: usize = 1000;

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc_w: usize,
    fc_b: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    layout: Arc<Layout>,
    wte: usize,
    wpe: usize,
    layers: Vec<LayerIdx>,
    lnf_g: usize,
    lnf_b: usize,
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    a: Vec<f64>,
    ln1: LnCache,
    qkv: Vec<f64>,
    att: Vec<f64>,
    o: Vec<f64>,
    m: Vec<f64>,
    ln2: LnCache,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct SeqCache {
    len: usize,
    layers: Vec<LayerCache>,
    fnl: Vec<f64>,
    lnf: LnCache,
    logits: Vec<f64>,
    lse: Vec<f64>,
}

impl SeqCache {
    fn loss(&self, t: usize, target: u32, vocab: usize) -> f64 {
        self.lse[t] - self.logits[t * vocab + target as usize]
    }

    /// `w · (softmax − onehot)` written into `out` for position `t`.
    fn dlogits_row(&self, t: usize, target: u32, vocab: usize, w: f64, out: &mut [f64]) {
        let row = &self.logits[t * vocab..(t + 1) * vocab];
        for (o, &z) in out.iter_mut().zip(row) {
            *o = w * (z - self.lse[t]).exp();
        }
        out[target as usize] -= w;
    }
}

/// Output of a full-batch reverse pass.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Mean loss over all positions, from the fused path.
    pub loss: f64,
    pub grads: ParamSet,
    pub proxy: Option<ProxyAccumulator>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn ln_forward(x: &[f64], g: &[f64], b: &[f64], s: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; s * d];
    let mut xhat = vec![0.0; s * d];
    let mut rstd = vec![0.0; s];
    for t in 0..s {
        let row = &x[t * d..(t + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = r;
        for e in 0..d {
            let h = (row[e] - mu) * r;
            xhat[t * d + e] = h;
            y[t * d + e] = h * g[e] + b[e];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Adds the input gradient into `dx` and parameter gradients into `dg`, `db`.
fn ln_backward(
    dy: &[f64],
    c: &LnCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
    s: usize,
    d: usize,
) {
    let mut dxhat = vec![0.0; d];
    for t in 0..s {
        let dyr = &dy[t * d..(t + 1) * d];
        let xh = &c.xhat[t * d..(t + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for e in 0..d {
            dg[e] += dyr[e] * xh[e];
            db[e] += dyr[e];
            dxhat[e] = dyr[e] * g[e];
            mean_dxhat += dxhat[e];
            mean_dxhat_xhat += dxhat[e] * xh[e];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let r = c.rstd[t];
        for e in 0..d {
            dx[t * d + e] += r * (dxhat[e] - mean_dxhat - xh[e] * mean_dxhat_xhat);
        }
    }
}

fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
    }
}

fn col_sum_into(dy: &[f64], out: &mut [f64]) {
    for row in dy.chunks_exact(out.len()) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

fn abs_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.abs()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (v, d, f, p) = (cfg.vocab_size, cfg.d_model, cfg.mlp_dim, cfg.seq_len);
        let mut l = Layout::new();
        let wte = l.push("wte", vec![v, d]);
        let wpe = l.push("wpe", vec![p, d]);
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let n = |s: &str| format!("h{i}.{s}");
                LayerIdx {
                    ln1_g: l.push(n("ln1.g"), vec![d]),
                    ln1_b: l.push(n("ln1.b"), vec![d]),
                    qkv_w: l.push(n("attn.qkv.w"), vec![d, 3 * d]),
                    qkv_b: l.push(n("attn.qkv.b"), vec![3 * d]),
                    proj_w: l.push(n("attn.proj.w"), vec![d, d]),
                    proj_b: l.push(n("attn.proj.b"), vec![d]),
                    ln2_g: l.push(n("ln2.g"), vec![d]),
                    ln2_b: l.push(n("ln2.b"), vec![d]),
                    fc_w: l.push(n("mlp.fc.w"), vec![d, f]),
                    fc_b: l.push(n("mlp.fc.b"), vec![f]),
                    out_w: l.push(n("mlp.proj.w"), vec![f, d]),
                    out_b: l.push(n("mlp.proj.b"), vec![d]),
                }
            })
            .collect();
        let lnf_g = l.push("lnf.g", vec![d]);
        let lnf_b = l.push("lnf.b", vec![d]);
        Ok(Self {
            cfg,
            layout: Arc::new(l),
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total()
    }

    /// Weight matrices of the linear maps, in layout order. Embeddings and
    /// the tied head are not among them.
    pub fn linear_maps(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.qkv_w, l.proj_w, l.fc_w, l.out_w])
            .collect()
    }

    /// LayerNorm gains start at one and its shifts at zero; every other
    /// bias is zero and every weight matrix is `N(0, INIT_STD)`.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut p = ParamSet::zeros(self.layout.clone());
        for (i, spec) in self.layout.specs().iter().enumerate() {
            let t = p.tensor_mut(i);
            if spec.shape.len() >= 2 {
                t.iter_mut().for_each(|v| *v = normal.sample(rng));
            } else if spec.name.ends_with(".g") {
                t.fill(1.0);
            }
        }
        p
    }

    fn check(&self, p: &ParamSet, batch: &TokenBatch) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "parameter set has {} values, model has {}",
                p.len(),
                self.n_params()
            )));
        }
        batch.check(self.cfg.vocab_size, self.cfg.seq_len)
    }

    fn forward_seq(&self, p: &ParamSet, tokens: &[u32]) -> SeqCache {
        let (v, d, f) = (self.cfg.vocab_size, self.cfg.d_model, self.cfg.mlp_dim);
        let nh = self.cfg.n_heads;
        let dh = d / nh;
        let s = tokens.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let wte = p.tensor(self.wte);
        let wpe = p.tensor(self.wpe);

        let mut x = vec![0.0; s * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let q = &wpe[t * d..(t + 1) * d];
            for k in 0..d {
                x[t * d + k] = e[k] + q[k];
            }
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        for li in &self.layers {
            let (a, ln1) = ln_forward(&x, p.tensor(li.ln1_g), p.tensor(li.ln1_b), s, d);
            let mut qkv = vec![0.0; s * 3 * d];
            gemm(
                s,
                d,
                3 * d,
                &a,
                false,
                p.tensor(li.qkv_w),
                false,
                0.0,
                &mut qkv,
            );
            add_bias(&mut qkv, p.tensor(li.qkv_b));

            let mut att = vec![0.0; nh * s * s];
            let mut o = vec![0.0; s * d];
            for h in 0..nh {
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                for i in 0..s {
                    let qi = &qkv[i * 3 * d + qo..i * 3 * d + qo + dh];
                    let prow = &mut att[(h * s + i) * s..(h * s + i) * s + i + 1];
                    let mut mx = f64::NEG_INFINITY;
                    for (j, pj) in prow.iter_mut().enumerate() {
                        *pj = scale * dot(qi, &qkv[j * 3 * d + ko..j * 3 * d + ko + dh]);
                        mx = mx.max(*pj);
                    }
                    let mut z = 0.0;
                    for pj in prow.iter_mut() {
                        *pj = (*pj - mx).exp();
                        z += *pj;
                    }
                    let oi = &mut o[i * d + h * dh..i * d + (h + 1) * dh];
                    for (j, pj) in prow.iter_mut().enumerate() {
                        *pj /= z;
                        let vj = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                        oi.iter_mut().zip(vj).for_each(|(a, b)| *a += *pj * b);
                    }
                }
            }
            let mut y = vec![0.0; s * d];
            gemm(s, d, d, &o, false, p.tensor(li.proj_w), false, 0.0, &mut y);
            add_bias(&mut y, p.tensor(li.proj_b));
            x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);

            let (m, ln2) = ln_forward(&x, p.tensor(li.ln2_g), p.tensor(li.ln2_b), s, d);
            let mut pre = vec![0.0; s * f];
            gemm(s, d, f, &m, false, p.tensor(li.fc_w), false, 0.0, &mut pre);
            add_bias(&mut pre, p.tensor(li.fc_b));
            let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
            gemm(s, f, d, &act, false, p.tensor(li.out_w), false, 0.0, &mut y);
            add_bias(&mut y, p.tensor(li.out_b));
            x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);

            layers.push(LayerCache {
                a,
                ln1,
                qkv,
                att,
                o,
                m,
                ln2,
                pre,
                act,
            });
        }

        let (fnl, lnf) = ln_forward(&x, p.tensor(self.lnf_g), p.tensor(self.lnf_b), s, d);
        let mut logits = vec![0.0; s * v];
        gemm(s, d, v, &fnl, false, wte, true, 0.0, &mut logits);
        let lse = logits
            .chunks_exact(v)
            .map(|row| {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        SeqCache {
            len: s,
            layers,
            fnl,
            lnf,
            logits,
            lse,
        }
    }

    /// Accumulates `∂(Σ_t dlogits_t · logits_t)/∂θ` into `grad`; when
    /// `abs` is given, adds `|x|ᵀ|dy|` for every linear map into it.
    fn backward_seq(
        &self,
        p: &ParamSet,
        tokens: &[u32],
        c: &SeqCache,
        dlogits: &[f64],
        grad: &mut [f64],
        mut abs: Option<&mut [f64]>,
    ) {
        let (v, d, f) = (self.cfg.vocab_size, self.cfg.d_model, self.cfg.mlp_dim);
        let nh = self.cfg.n_heads;
        let dh = d / nh;
        let s = c.len;
        let scale = 1.0 / (dh as f64).sqrt();
        let layout = self.layout.clone();
        let range = |i: usize| layout.spec(i).range();
        let wte = p.tensor(self.wte);

        gemm(
            v,
            s,
            d,
            dlogits,
            true,
            &c.fnl,
            false,
            1.0,
            &mut grad[range(self.wte)],
        );
        let mut dfnl = vec![0.0; s * d];
        gemm(s, v, d, dlogits, false, wte, false, 0.0, &mut dfnl);

        let mut dx = vec![0.0; s * d];
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        ln_backward(
            &dfnl,
            &c.lnf,
            p.tensor(self.lnf_g),
            &mut dg,
            &mut db,
            &mut dx,
            s,
            d,
        );
        add_into(&mut grad[range(self.lnf_g)], &dg);
        add_into(&mut grad[range(self.lnf_b)], &db);

        let linear = |k: usize,
                      n: usize,
                      widx: usize,
                      x: &[f64],
                      dy: &[f64],
                      grad: &mut [f64],
                      abs: Option<&mut [f64]>| {
            gemm(k, s, n, x, true, dy, false, 1.0, &mut grad[range(widx)]);
            if let Some(abs) = abs {
                gemm(
                    k,
                    s,
                    n,
                    &abs_vec(x),
                    true,
                    &abs_vec(dy),
                    false,
                    1.0,
                    &mut abs[range(widx)],
                );
            }
        };

        for (li, lc) in self.layers.iter().zip(&c.layers).rev() {
            // MLP branch; `dx` is the gradient on the block output.
            linear(f, d, li.out_w, &lc.act, &dx, grad, abs.as_deref_mut());
            col_sum_into(&dx, &mut grad[range(li.out_b)]);
            let mut dpre = vec![0.0; s * f];
            gemm(
                s,
                d,
                f,
                &dx,
                false,
                p.tensor(li.out_w),
                true,
                0.0,
                &mut dpre,
            );
            dpre.iter_mut()
                .zip(&lc.pre)
                .for_each(|(g, &z)| *g *= gelu_grad(z));
            linear(d, f, li.fc_w, &lc.m, &dpre, grad, abs.as_deref_mut());
            col_sum_into(&dpre, &mut grad[range(li.fc_b)]);
            let mut dm = vec![0.0; s * d];
            gemm(s, f, d, &dpre, false, p.tensor(li.fc_w), true, 0.0, &mut dm);
            dg.fill(0.0);
            db.fill(0.0);
            ln_backward(
                &dm,
                &lc.ln2,
                p.tensor(li.ln2_g),
                &mut dg,
                &mut db,
                &mut dx,
                s,
                d,
            );
            add_into(&mut grad[range(li.ln2_g)], &dg);
            add_into(&mut grad[range(li.ln2_b)], &db);

            // Attention branch.
            linear(d, d, li.proj_w, &lc.o, &dx, grad, abs.as_deref_mut());
            col_sum_into(&dx, &mut grad[range(li.proj_b)]);
            let mut dout = vec![0.0; s * d];
            gemm(
                s,
                d,
                d,
                &dx,
                false,
                p.tensor(li.proj_w),
                true,
                0.0,
                &mut dout,
            );

            let qkv = &lc.qkv;
            let mut dqkv = vec![0.0; s * 3 * d];
            let mut dp = vec![0.0; s];
            for h in 0..nh {
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                for i in 0..s {
                    let prow = &lc.att[(h * s + i) * s..(h * s + i) * s + i + 1];
                    let doi = &dout[i * d + h * dh..i * d + (h + 1) * dh];
                    let mut wsum = 0.0;
                    for (j, &pj) in prow.iter().enumerate() {
                        let vj = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                        dp[j] = dot(doi, vj);
                        wsum += pj * dp[j];
                        let dvj = &mut dqkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                        dvj.iter_mut().zip(doi).for_each(|(a, b)| *a += pj * b);
                    }
                    for (j, &pj) in prow.iter().enumerate() {
                        let ds = pj * (dp[j] - wsum) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for e in 0..dh {
                            dqkv[i * 3 * d + qo + e] += ds * qkv[j * 3 * d + ko + e];
                            dqkv[j * 3 * d + ko + e] += ds * qkv[i * 3 * d + qo + e];
                        }
                    }
                }
            }
            linear(d, 3 * d, li.qkv_w, &lc.a, &dqkv, grad, abs.as_deref_mut());
            col_sum_into(&dqkv, &mut grad[range(li.qkv_b)]);
            let mut da = vec![0.0; s * d];
            gemm(
                s,
                3 * d,
                d,
                &dqkv,
                false,
                p.tensor(li.qkv_w),
                true,
                0.0,
                &mut da,
            );
            dg.fill(0.0);
            db.fill(0.0);
            ln_backward(
                &da,
                &lc.ln1,
                p.tensor(li.ln1_g),
                &mut dg,
                &mut db,
                &mut dx,
                s,
                d,
            );
            add_into(&mut grad[range(li.ln1_g)], &dg);
            add_into(&mut grad[range(li.ln1_b)], &db);
        }

        let wte_off = layout.spec(self.wte).offset;
        let wpe_off = layout.spec(self.wpe).offset;
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &dx[t * d..(t + 1) * d];
            let e = wte_off + tok as usize * d;
            add_into(&mut grad[e..e + d], row);
            let q = wpe_off + t * d;
            add_into(&mut grad[q..q + d], row);
        }
    }

    /// Cross-entropy of each next-token prediction, `n_seq x seq` row-major.
    pub fn forward_per_token(&self, p: &ParamSet, batch: &TokenBatch) -> Result<Vec<f64>> {
        self.check(p, batch)?;
        let v = self.cfg.vocab_size;
        let rows: Vec<Vec<f64>> = (0..batch.n_seq())
            .into_par_iter()
            .map(|b| {
                let c = self.forward_seq(p, batch.inputs(b));
                batch
                    .targets(b)
                    .iter()
                    .enumerate()
                    .map(|(t, &y)| c.loss(t, y, v))
                    .collect()
            })
            .collect();
        Ok(rows.concat())
    }

    /// Gradient of the mean loss over every position of `batch`.
    pub fn backward(
        &self,
        p: &ParamSet,
        batch: &TokenBatch,
        accumulate_proxy: bool,
    ) -> Result<Backward> {
        self.check(p, batch)?;
        let v = self.cfg.vocab_size;
        let n = self.n_params();
        let w = 1.0 / batch.n_positions() as f64;
        let parts: Vec<(Vec<f64>, Option<Vec<f64>>, CompensatedSum)> = (0..batch.n_seq())
            .into_par_iter()
            .map(|b| {
                let tokens = batch.inputs(b);
                let c = self.forward_seq(p, tokens);
                let mut loss = CompensatedSum::new();
                let mut dlogits = vec![0.0; c.len * v];
                for (t, &y) in batch.targets(b).iter().enumerate() {
                    loss.add(c.loss(t, y, v));
                    c.dlogits_row(t, y, v, w, &mut dlogits[t * v..(t + 1) * v]);
                }
                let mut grad = vec![0.0; n];
                let mut abs = accumulate_proxy.then(|| vec![0.0; n]);
                self.backward_seq(p, tokens, &c, &dlogits, &mut grad, abs.as_deref_mut());
                (grad, abs, loss)
            })
            .collect();

        let mut grads = vec![0.0; n];
        let mut abs_total = accumulate_proxy.then(|| vec![0.0; n]);
        let mut loss = CompensatedSum::new();
        for (g, a, l) in parts {
            add_into(&mut grads, &g);
            if let (Some(total), Some(a)) = (abs_total.as_mut(), a) {
                add_into(total, &a);
            }
            loss.add(l.value());
        }
        let proxy = abs_total.map(|abs| {
            let tensors = self
                .linear_maps()
                .into_iter()
                .map(|i| {
                    let spec = self.layout.spec(i);
                    ProxyTensor {
                        name: spec.name.clone(),
                        shape: spec.shape.clone(),
                        sum_grads: grads[spec.range()].to_vec(),
                        sum_abs_grads: abs[spec.range()].to_vec(),
                    }
                })
                .collect();
            ProxyAccumulator::new(tensors, batch.n_positions())
        });
        Ok(Backward {
            loss: loss.value() * w,
            grads: ParamSet::from_flat(self.layout.clone(), grads)?,
            proxy,
        })
    }

    /// Exact gradient of the loss at each `(sequence, position)` on its own,
    /// one row per entry of `positions`, in order.
    pub fn per_token_grads(
        &self,
        p: &ParamSet,
        batch: &TokenBatch,
        positions: &[(usize, usize)],
    ) -> Result<GradientMatrix> {
        self.check(p, batch)?;
        if positions.is_empty() {
            return Err(Error::invalid("no positions requested"));
        }
        if positions.len() > PER_TOKEN_CAP {
            return Err(Error::invalid(format!(
                "{} positions requested, cap is {PER_TOKEN_CAP}",
                positions.len()
            )));
        }
        if let Some(&(b, s)) = positions
            .iter()
            .find(|&&(b, s)| b >= batch.n_seq() || s >= batch.seq())
        {
            return Err(Error::invalid(format!(
                "position ({b}, {s}) outside batch {} x {}",
                batch.n_seq(),
                batch.seq()
            )));
        }
        let v = self.cfg.vocab_size;
        let n = self.n_params();
        let mut seqs: Vec<usize> = positions.iter().map(|&(b, _)| b).collect();
        seqs.sort_unstable();
        seqs.dedup();
        let caches: Vec<SeqCache> = seqs
            .par_iter()
            .map(|&b| self.forward_seq(p, batch.inputs(b)))
            .collect();
        let rows: Vec<Vec<f64>> = positions
            .par_iter()
            .map(|&(b, t)| {
                let c = &caches[seqs.binary_search(&b).expect("cached")];
                let mut dlogits = vec![0.0; c.len * v];
                let y = batch.targets(b)[t];
                c.dlogits_row(t, y, v, 1.0, &mut dlogits[t * v..(t + 1) * v]);
                let mut grad = vec![0.0; n];
                self.backward_seq(p, batch.inputs(b), c, &dlogits, &mut grad, None);
                grad
            })
            .collect();
        GradientMatrix::new(positions.len(), n, rows.concat())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
