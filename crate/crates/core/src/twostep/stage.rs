//! The stage-one integrand `α(X₁, x₂, y)` and its derivatives.

use super::density::FantasySample;
use crate::acq::{ei_parts, ei_times_pf_grad, pf_parts};
use crate::error::Result;
use crate::gp::{sq_dist, GpModel, PosteriorBundle};
use nalgebra::DMatrix;

/// Stage-one models after conditioning on one fantasy sample at `X₁`.
#[derive(Debug, Clone)]
pub struct StageOne {
    objective: GpModel,
    constraints: Vec<GpModel>,
    batch: Vec<Vec<f64>>,
    f0_star: f64,
    f1_star: f64,
}

impl StageOne {
    pub fn new(bundle: &PosteriorBundle, x1: &[Vec<f64>], sample: &FantasySample, f0_star: f64) -> Result<Self> {
        let objective = bundle.objective.condition_on_fantasy(x1, &sample.y_f)?;
        let constraints = bundle
            .active_constraints()
            .zip(&sample.y_g)
            .map(|(c, y)| c.condition_on_fantasy(x1, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(StageOne {
            objective,
            constraints,
            batch: x1.to_vec(),
            f0_star,
            f1_star: sample.f1_star,
        })
    }

    /// `f₀* − f₁*`, the part of α realized by the batch itself.
    pub fn realized_improvement(&self) -> f64 {
        self.f0_star - self.f1_star
    }

    pub fn objective(&self) -> &GpModel {
        &self.objective
    }

    pub fn constraints(&self) -> &[GpModel] {
        &self.constraints
    }

    /// Distance from `x2` to the nearest point of `D ∪ X₁`.
    pub fn min_distance(&self, x2: &[f64]) -> f64 {
        self.objective.min_distance(x2)
    }

    /// `α = f₀* − f₁* + EI(f₁* − μ₁(x₂), σ₁²(x₂)) · Π PF(μᶜ₁(x₂), σᶜ₁²(x₂))`.
    pub fn alpha(&self, x2: &[f64]) -> f64 {
        let p = self.objective.posterior(x2);
        let mut h = ei_parts(self.f1_star - p.mean, p.sd()).0;
        for c in &self.constraints {
            if h == 0.0 {
                break;
            }
            let pc = c.posterior(x2);
            h *= pf_parts(pc.mean, pc.sd()).0;
        }
        self.realized_improvement() + h
    }

    /// α and its gradient in `x₂`; the gradient is zero when flagged degenerate.
    pub fn alpha_grad_x2(&self, x2: &[f64]) -> (f64, Vec<f64>, bool) {
        let g = ei_times_pf_grad(&self.objective, self.constraints.iter(), self.f1_star, x2);
        (self.realized_improvement() + g.value, g.grad, g.degenerate)
    }

    /// α and `∇_{X₁} α` at fixed `x₂` and fixed fantasy values (`q × d`).
    pub fn alpha_grad_batch(&self, x2: &[f64]) -> (f64, DMatrix<f64>, bool) {
        let q = self.batch.len();
        let d = x2.len();
        let go = self.objective.trailing_input_grads(q, x2);
        let (e, e_m, e_s) = ei_parts(self.f1_star - go.mean, go.sigma);
        let mut degenerate = go.degenerate;
        let mut grad = DMatrix::zeros(q, d);
        let mut pf_vals = Vec::with_capacity(self.constraints.len());
        let mut pf_grads = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let gc = c.trailing_input_grads(q, x2);
            degenerate |= gc.degenerate;
            let (p, p_m, p_s) = pf_parts(gc.mean, gc.sigma);
            pf_vals.push(p);
            pf_grads.push(gc.dmean * p_m + gc.dsigma * p_s);
        }
        let prod: f64 = pf_vals.iter().product();
        let alpha = self.realized_improvement() + e * prod;
        if degenerate {
            return (alpha, grad, true);
        }
        grad += (go.dmean * (-e_m) + go.dsigma * e_s) * prod;
        for (k, gk) in pf_grads.iter().enumerate() {
            let others: f64 = pf_vals.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, p)| p).product();
            grad += gk * (e * others);
        }
        (alpha, grad, false)
    }

    /// True when `x2` lies inside the exclusion ball of radius `delta`.
    pub(crate) fn excluded(&self, x2: &[f64], delta: f64) -> bool {
        delta > 0.0 && (self.objective.inputs().iter().any(|z| sq_dist(z, x2) < delta * delta))
    }
}
