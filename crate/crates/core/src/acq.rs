//! Myopic acquisitions: EI, probability of feasibility, constrained EI and
//! its Monte-Carlo batch version.

use crate::bounds::Bounds;
use crate::error::{CboError, Result};
use crate::gp::{GpModel, PosteriorBundle};
use crate::normal::{cdf, pdf};
use crate::qmc::ScrambledSobol;
use crate::search::multistart_maximize;
use crate::twostep::FantasyDistribution;

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

impl McEstimate {
    /// Mean and standard error of `values`.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        McEstimate {
            estimate: mean,
            standard_error: (var / n).sqrt(),
        }
    }
}

/// Expected improvement for improvement mean `m` and variance `v`.
pub fn ei(m: f64, v: f64) -> Result<f64> {
    if v < 0.0 || v.is_nan() {
        return Err(CboError::InvalidArgument(format!("negative variance {v}")));
    }
    Ok(ei_parts(m, v.sqrt()).0)
}

/// Probability that a constraint with posterior `(mc, vc)` is ≤ 0.
pub fn pf(mc: f64, vc: f64) -> Result<f64> {
    if vc < 0.0 || vc.is_nan() {
        return Err(CboError::InvalidArgument(format!("negative variance {vc}")));
    }
    Ok(pf_parts(mc, vc.sqrt()).0)
}

/// `(EI, ∂EI/∂m, ∂EI/∂s)` in terms of the standard deviation `s`.
pub(crate) fn ei_parts(m: f64, s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (m.max(0.0), if m > 0.0 { 1.0 } else { 0.0 }, 0.0);
    }
    let z = m / s;
    let (cz, pz) = (cdf(z), pdf(z));
    ((m * cz + s * pz).max(0.0), cz, pz)
}

/// `(PF, ∂PF/∂mc, ∂PF/∂s)` in terms of the standard deviation `s`.
pub(crate) fn pf_parts(mc: f64, s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (if mc <= 0.0 { 1.0 } else { 0.0 }, 0.0, 0.0);
    }
    let z = -mc / s;
    let pz = pdf(z);
    (cdf(z), -pz / s, pz * mc / (s * s))
}

/// Product of the feasibility probabilities of `constraints` at `x`.
pub fn pf_product<'a>(constraints: impl Iterator<Item = &'a GpModel>, x: &[f64]) -> f64 {
    constraints
        .map(|c| {
            let p = c.posterior(x);
            pf_parts(p.mean, p.sd()).0
        })
        .product()
}

fn incumbent_value(bundle: &PosteriorBundle) -> Result<f64> {
    bundle.incumbent().map(|i| i.value).ok_or(CboError::MissingIncumbent)
}

/// Constrained expected improvement `EI(f₀* − μ(x), σ²(x)) · Π PF`.
pub fn eic(bundle: &PosteriorBundle, x: &[f64]) -> Result<f64> {
    let f0 = incumbent_value(bundle)?;
    let p = bundle.objective.posterior(x);
    Ok(ei_parts(f0 - p.mean, p.sd()).0 * pf_product(bundle.active_constraints(), x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EicGrad {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when some σ-gradient was degenerate; `grad` is then zero.
    pub degenerate: bool,
}

/// Value and gradient of `h(x) = EI(m(x), s(x)) · Π PF_k(x)` for a shifted
/// objective mean `m = target − μ(x)`.
pub(crate) fn ei_times_pf_grad<'a>(
    objective: &GpModel,
    constraints: impl Iterator<Item = &'a GpModel>,
    target: f64,
    x: &[f64],
) -> EicGrad {
    let d = x.len();
    let po = objective.posterior_grads(x);
    let (e, e_m, e_s) = ei_parts(target - po.mean, po.variance.sqrt());
    let mut degenerate = po.degenerate;
    let mut pf_vals = Vec::new();
    let mut pf_grads = Vec::new();
    for c in constraints {
        let pc = c.posterior_grads(x);
        degenerate |= pc.degenerate;
        let (p, p_m, p_s) = pf_parts(pc.mean, pc.variance.sqrt());
        pf_vals.push(p);
        pf_grads.push((0..d).map(|l| p_m * pc.dmean[l] + p_s * pc.dsigma[l]).collect::<Vec<_>>());
    }
    let prod: f64 = pf_vals.iter().product();
    let value = e * prod;
    if degenerate {
        return EicGrad {
            value,
            grad: vec![0.0; d],
            degenerate,
        };
    }
    let mut grad: Vec<f64> = (0..d).map(|l| (-e_m * po.dmean[l] + e_s * po.dsigma[l]) * prod).collect();
    for (k, gk) in pf_grads.iter().enumerate() {
        let others: f64 = pf_vals.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, p)| p).product();
        for l in 0..d {
            grad[l] += e * gk[l] * others;
        }
    }
    EicGrad { value, grad, degenerate }
}

/// Gradient of [`eic`] in `x`; zero with a flag near sampled points.
pub fn eic_grad(bundle: &PosteriorBundle, x: &[f64]) -> Result<EicGrad> {
    let f0 = incumbent_value(bundle)?;
    Ok(ei_times_pf_grad(&bundle.objective, bundle.active_constraints(), f0, x))
}

/// QMC estimate of `E[max_i (f₀* − f(x_i))⁺ · Π_m 1{g_m(x_i) ≤ 0}]` under the
/// joint current posterior at `xs`.
pub fn batch_eic_mc(bundle: &PosteriorBundle, xs: &[Vec<f64>], n_samples: usize, seed: u64) -> Result<McEstimate> {
    if xs.is_empty() || n_samples < 2 {
        return Err(CboError::InvalidArgument("batch_eic_mc needs q ≥ 1 and n_samples ≥ 2".into()));
    }
    let f0 = incumbent_value(bundle)?;
    let dist = FantasyDistribution::new(bundle, xs)?;
    let sobol = ScrambledSobol::new(dist.dims(), seed);
    let mut z = vec![0.0; dist.dims()];
    let values: Vec<f64> = (0..n_samples as u32)
        .map(|i| {
            sobol.normal(i, &mut z);
            let (y_f, y_g) = dist.transform(&z);
            f0 - crate::twostep::stage_one_incumbent(f0, &y_f, &y_g)
        })
        .collect();
    Ok(McEstimate::from_values(&values))
}

/// Settings for the multistart ascent used by the myopic optimizers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentOptions {
    pub n_screen: usize,
    pub n_ascents: usize,
    pub steps: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            n_screen: 1024,
            n_ascents: 10,
            steps: 100,
        }
    }
}

fn screening_points(bounds: &Bounds, n: usize, seed: u64, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts = ScrambledSobol::new(bounds.dim(), seed).points_in(bounds, n);
    pts.extend(extra.iter().cloned());
    pts
}

/// Maximizes [`eic`] over the box.
pub fn maximize_eic(bundle: &PosteriorBundle, bounds: &Bounds, opts: &AscentOptions, seed: u64) -> Result<(Vec<f64>, f64)> {
    let f0 = incumbent_value(bundle)?;
    let cands = screening_points(bounds, opts.n_screen, seed, &[]);
    multistart_maximize(bounds, &cands, opts.n_ascents, opts.steps, |x| {
        let g = ei_times_pf_grad(&bundle.objective, bundle.active_constraints(), f0, x);
        Some((g.value, g.grad))
    })
    .ok_or_else(|| CboError::InvalidArgument("no finite EIC value in the domain".into()))
}

/// Maximizes the product of feasibility probabilities (used before any
/// feasible point is known).
pub fn maximize_pf(bundle: &PosteriorBundle, bounds: &Bounds, opts: &AscentOptions, seed: u64) -> (Vec<f64>, f64) {
    let d = bounds.dim();
    let cands = screening_points(bounds, opts.n_screen, seed, &[]);
    let f = |x: &[f64]| {
        let mut vals = Vec::new();
        let mut grads = Vec::new();
        let mut degenerate = false;
        for c in bundle.active_constraints() {
            let pc = c.posterior_grads(x);
            degenerate |= pc.degenerate;
            let (p, p_m, p_s) = pf_parts(pc.mean, pc.variance.sqrt());
            vals.push(p);
            grads.push((0..d).map(|l| p_m * pc.dmean[l] + p_s * pc.dsigma[l]).collect::<Vec<_>>());
        }
        let value: f64 = vals.iter().product();
        let mut grad = vec![0.0; d];
        if !degenerate {
            for (k, gk) in grads.iter().enumerate() {
                let others: f64 = vals.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, p)| p).product();
                for l in 0..d {
                    grad[l] += gk[l] * others;
                }
            }
        }
        Some((value, grad))
    };
    multistart_maximize(bounds, &cands, opts.n_ascents, opts.steps, f).unwrap_or_else(|| (cands[0].clone(), 0.0))
}

/// Sequential-greedy batch of `q` points: each new point maximizes the MC
/// batch value given the points already chosen, over a QMC candidate set.
pub fn greedy_batch_eic(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    q: usize,
    opts: &AscentOptions,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (first, _) = maximize_eic(bundle, bounds, opts, seed)?;
    let mut batch = vec![first];
    let cands = screening_points(bounds, opts.n_screen.min(256), crate::qmc::derive_seed(seed, 1), &[]);
    while batch.len() < q {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for c in &cands {
            if batch.iter().any(|b| crate::gp::sq_dist(b, c) < 1e-16) {
                continue;
            }
            let mut trial = batch.clone();
            trial.push(c.clone());
            let v = batch_eic_mc(bundle, &trial, n_samples, seed)?.estimate;
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((c.clone(), v));
            }
        }
        let (x, _) = best.ok_or_else(|| CboError::InvalidArgument("empty candidate set".into()))?;
        batch.push(x);
    }
    Ok(batch)
}
