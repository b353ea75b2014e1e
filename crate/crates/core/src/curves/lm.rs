//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.
//!
//! Minimizes `0.5 * |r(x)|^2` using Marquardt's diagonal scaling and the
//! Nielsen damping update. Problems are a handful of parameters and a few
//! hundred residuals, so every iteration forms `J^T J` explicitly.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `n_residuals x n_params` Jacobian of the residuals.
    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative cost reduction below which an accepted step ends the search.
    pub ftol: f64,
    /// Relative step length below which the search ends.
    pub xtol: f64,
    /// Infinity norm of the gradient below which the search ends.
    pub gtol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            ftol: 1e-15,
            xtol: 1e-15,
            gtol: 1e-30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    SmallCost,
    SmallReduction,
    SmallStep,
    SmallGradient,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    /// `0.5 * |r|^2` at `x`.
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LmOutcome {
    pub fn converged(&self) -> bool {
        self.termination != Termination::IterationCap
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * crate::numeric::sum(r.iter().map(|v| v * v))
}

pub fn minimize(problem: &impl LeastSquaresProblem, x0: &[f64], cfg: &LmConfig) -> LmOutcome {
    let n = problem.n_params();
    let m = problem.n_residuals();
    debug_assert_eq!(x0.len(), n);

    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&x, &mut r);
    let mut cost = half_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(&x, &mut jac);

    let mut r_trial = vec![0.0; m];
    let mut x_trial = vec![0.0; n];
    let mut mu = f64::NAN;
    let mut nu = 2.0;
    let mut iterations = 0;

    let termination = loop {
        if cost == 0.0 {
            break Termination::SmallCost;
        }
        if iterations >= cfg.max_iterations {
            break Termination::IterationCap;
        }
        iterations += 1;

        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= cfg.gtol {
            break Termination::SmallGradient;
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
        let scale: Vec<f64> = (0..n).map(|i| a[(i, i)].max(1e-12 * max_diag)).collect();
        if mu.is_nan() {
            mu = 1e-3;
        }

        // Inner loop: grow damping until a step reduces the cost.
        let mut accepted = false;
        let mut stop = None;
        while !accepted {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += mu * scale[i];
            }
            let h = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    if mu > 1e30 {
                        stop = Some(Termination::SmallStep);
                        break;
                    }
                    continue;
                }
            };
            let x_norm = crate::numeric::norm2(&x);
            if h.norm() <= cfg.xtol * (x_norm + cfg.xtol) {
                stop = Some(Termination::SmallStep);
                break;
            }
            for i in 0..n {
                x_trial[i] = x[i] + h[i];
            }
            problem.residuals(&x_trial, &mut r_trial);
            let trial_cost = half_sq(&r_trial);
            // predicted reduction: 0.5 * h^T (mu D h - g)
            let predicted: f64 = 0.5
                * (0..n)
                    .map(|i| h[i] * (mu * scale[i] * h[i] - g[i]))
                    .sum::<f64>();
            let actual = cost - trial_cost;
            let rho = if predicted > 0.0 {
                actual / predicted
            } else {
                -1.0
            };
            if trial_cost.is_finite() && actual > 0.0 && rho > 0.0 {
                accepted = true;
                std::mem::swap(&mut x, &mut x_trial);
                std::mem::swap(&mut r, &mut r_trial);
                let previous = cost;
                cost = trial_cost;
                problem.jacobian(&x, &mut jac);
                mu *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                if actual <= cfg.ftol * previous {
                    stop = Some(Termination::SmallReduction);
                }
            } else {
                mu *= nu;
                nu *= 2.0;
                if mu > 1e30 {
                    stop = Some(Termination::SmallStep);
                    break;
                }
            }
        }
        if let Some(t) = stop {
            break t;
        }
    };

    LmOutcome {
        x,
        cost,
        residuals: r,
        jacobian: jac,
        iterations,
        termination,
    }
}

/// `s^2 (J^T J)^{-1}` with `s^2 = |r|^2 / (m - n)`, or `None` when `J^T J`
/// is numerically singular or there are no spare degrees of freedom.
pub fn covariance(outcome: &LmOutcome) -> Option<DMatrix<f64>> {
    let (m, n) = outcome.jacobian.shape();
    if m <= n {
        return None;
    }
    let jtj = outcome.jacobian.transpose() * &outcome.jacobian;
    let svd = jtj.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-14 {
        return None;
    }
    let inv = jtj.try_inverse()?;
    let s2 = 2.0 * outcome.cost / (m - n) as f64;
    Some(inv * s2)
}
