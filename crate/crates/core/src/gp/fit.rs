//! Type-II maximum likelihood for the kernel hyperparameters.
//!
//! Parameters are searched in log space inside a box scaled by the domain
//! widths and the target variance, with projected spectral-gradient ascent
//! from a scrambled-Sobol set of starts.

use super::kernel::KernelParams;
use super::linalg::{dot, forward_solve, JITTER_REL};
use crate::qmc::ScrambledSobol;
use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Jitter ceiling while fitting; parameter vectors needing more are rejected.
const FIT_MAX_JITTER_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            seed: 0,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: KernelParams,
    /// Log marginal likelihood at `params` (`None` on the fallback branch).
    pub log_marginal_likelihood: Option<f64>,
    /// Log marginal likelihood at each start, in order (warm start last).
    pub initial_values: Vec<f64>,
    pub fallback: bool,
}

fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// True when every target equals the first (up to rounding).
pub fn targets_degenerate(targets: &[f64]) -> bool {
    let (lo, hi) = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    targets.is_empty() || hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0)
}

fn theta_to_params(theta: &[f64]) -> KernelParams {
    KernelParams {
        signal_variance: theta[0].exp(),
        lengthscales: theta[1..].iter().map(|t| t.exp()).collect(),
    }
}

/// Log marginal likelihood and its gradient in `(log sv, log ℓ)`.
/// Returns `None` when the kernel matrix cannot be factorized within the fit jitter ceiling.
pub fn log_marginal_likelihood(inputs: &[Vec<f64>], targets: &[f64], params: &KernelParams) -> Option<(f64, Vec<f64>)> {
    let n = inputs.len();
    let d = params.dim();
    let sv = params.signal_variance;
    let kmat = DMatrix::from_fn(n, n, |i, j| params.k(&inputs[i], &inputs[j]));
    let mut jitter = JITTER_REL * sv;
    let chol = loop {
        let mut a = kmat.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            break c;
        }
        jitter *= 10.0;
        if jitter > FIT_MAX_JITTER_REL * sv * (1.0 + 1e-12) {
            return None;
        }
    };
    let l = chol.l();
    let mut z = targets.to_vec();
    forward_solve(&l, &mut z);
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let lml = -0.5 * dot(&z, &z) - logdet - 0.5 * n as f64 * (2.0 * PI).ln();
    if !lml.is_finite() {
        return None;
    }
    let alpha = chol.solve(&nalgebra::DVector::from_column_slice(targets));
    let inv = chol.inverse();
    let mut grad = vec![0.0; d + 1];
    // ∂A/∂log sv = A (jitter is proportional to sv)
    grad[0] = 0.5 * (dot(alpha.as_slice(), targets) - n as f64);
    for l_idx in 0..d {
        let ell2 = params.lengthscales[l_idx].powi(2);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let diff = inputs[i][l_idx] - inputs[j][l_idx];
                let dk = kmat[(i, j)] * diff * diff / ell2;
                acc += (alpha[i] * alpha[j] - inv[(i, j)]) * dk;
            }
        }
        grad[l_idx + 1] = 0.5 * acc;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some((lml, grad))
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Projected spectral-gradient ascent (Barzilai–Borwein steps with Armijo
/// backtracking). Monotone: the returned value is ≥ the value at `x0`.
pub(crate) fn spg_maximize<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], max_iters: usize) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut lambda = if gmax > 0.0 { (1.0 / gmax).min(1.0) } else { 1.0 };
    for _ in 0..max_iters {
        let mut trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + lambda * gi).collect();
        project(&mut trial, lo, hi);
        let dir: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
        if dir.iter().all(|v| v.abs() < 1e-9) {
            break;
        }
        let slope = dot(&g, &dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            if let Some((fc, gc)) = f(&cand) {
                if fc >= fx + 1e-4 * t * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let ss = dot(&s, &s);
        lambda = if sy < 0.0 { (ss / -sy).clamp(1e-10, 1e10) } else { 1e3 };
        let improvement = fnew - fx;
        x = xn;
        fx = fnew;
        g = gn;
        if improvement <= 1e-12 * (1.0 + fx.abs()) {
            break;
        }
    }
    Some((x, fx))
}

/// Fits `(signal_variance, lengthscales)` by maximizing the log marginal likelihood.
///
/// `widths` are the domain widths per input dimension. When all targets are
/// identical the fallback `(max(var, 1e-6), widths)` is returned.
pub fn fit_hyperparameters(
    inputs: &[Vec<f64>],
    targets: &[f64],
    widths: &[f64],
    options: &FitOptions,
    warm_start: Option<&KernelParams>,
) -> FitReport {
    let d = widths.len();
    let n = targets.len();
    if n < 2 {
        // A single observation carries no lengthscale information.
        let sv = targets.first().map(|y| (y * y).max(1.0)).unwrap_or(1.0);
        return FitReport {
            params: KernelParams {
                signal_variance: sv,
                lengthscales: widths.iter().map(|w| 0.25 * w).collect(),
            },
            log_marginal_likelihood: None,
            initial_values: Vec::new(),
            fallback: true,
        };
    }
    if targets_degenerate(targets) {
        return FitReport {
            params: KernelParams {
                signal_variance: population_variance(targets).max(1e-6),
                lengthscales: widths.to_vec(),
            },
            log_marginal_likelihood: None,
            initial_values: Vec::new(),
            fallback: true,
        };
    }
    let var = population_variance(targets).max(1e-12);
    let mut lo = Vec::with_capacity(d + 1);
    let mut hi = Vec::with_capacity(d + 1);
    lo.push((1e-4 * var).ln());
    hi.push((1e4 * var).ln());
    for w in widths {
        lo.push((1e-3 * w).ln());
        hi.push((10.0 * w).ln());
    }
    let objective = |theta: &[f64]| log_marginal_likelihood(inputs, targets, &theta_to_params(theta));

    let restarts = options.restarts.max(1);
    let design = ScrambledSobol::new(d + 1, options.seed);
    let mut u = vec![0.0; d + 1];
    let mut starts: Vec<Vec<f64>> = (0..restarts as u32)
        .map(|i| {
            design.uniform(i, &mut u);
            // the variance coordinate is centred on var(targets); lengthscales span the box
            let mut theta = Vec::with_capacity(d + 1);
            theta.push(var.ln() + (u[0] - 0.5) * 2.0);
            for j in 0..d {
                let (a, b) = (lo[j + 1], (widths[j]).ln());
                theta.push(a + (b - a) * (0.35 + 0.65 * u[j + 1]));
            }
            theta
        })
        .collect();
    if let Some(ws) = warm_start.filter(|w| w.dim() == d) {
        let mut theta = vec![ws.signal_variance.ln()];
        theta.extend(ws.lengthscales.iter().map(|l| l.ln()));
        starts.push(theta);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut initial_values = Vec::with_capacity(starts.len());
    for start in &mut starts {
        project(start, &lo, &hi);
        let init = objective(start).map(|(v, _)| v).unwrap_or(f64::NEG_INFINITY);
        initial_values.push(init);
        if let Some((theta, value)) = spg_maximize(objective, start, &lo, &hi, options.max_iters) {
            if best.as_ref().is_none_or(|(_, b)| value > *b) {
                best = Some((theta, value));
            }
        }
    }
    match best {
        Some((theta, value)) => FitReport {
            params: theta_to_params(&theta),
            log_marginal_likelihood: Some(value),
            initial_values,
            fallback: false,
        },
        None => FitReport {
            params: KernelParams {
                signal_variance: var,
                lengthscales: widths.to_vec(),
            },
            log_marginal_likelihood: None,
            initial_values,
            fallback: true,
        },
    }
}
