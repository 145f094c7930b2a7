//! Synthetic benchmark problems and brute-force oracles for their optima.

use crate::bounds::Bounds;
use crate::error::{CboError, Result};
use crate::gp::spg_maximize;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Objective and constraint values at one point.
pub type Evaluation = (f64, Vec<f64>);

type Evaluator = Arc<dyn Fn(&[f64]) -> Evaluation + Send + Sync>;

/// Minimize `f(x)` over a box subject to `g_i(x) ≤ 0`.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub bounds: Bounds,
    pub n_constraints: usize,
    evaluator: Evaluator,
    /// Constrained optimum, when known.
    pub true_optimum: Option<f64>,
    /// Maximum of `f` over the box, used by the penalty scoring mode.
    pub domain_max: Option<f64>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("n_constraints", &self.n_constraints)
            .field("true_optimum", &self.true_optimum)
            .field("domain_max", &self.domain_max)
            .finish()
    }
}

impl Problem {
    pub fn new<F>(name: impl Into<String>, bounds: Bounds, n_constraints: usize, evaluator: F) -> Self
    where
        F: Fn(&[f64]) -> Evaluation + Send + Sync + 'static,
    {
        Problem {
            name: name.into(),
            bounds,
            n_constraints,
            evaluator: Arc::new(evaluator),
            true_optimum: None,
            domain_max: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        (self.evaluator)(x)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.evaluate(x).0
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.evaluate(x).1.iter().all(|g| *g <= 0.0)
    }

    pub fn with_optimum(mut self, value: f64) -> Self {
        self.true_optimum = Some(value);
        self
    }

    pub fn with_domain_max(mut self, value: f64) -> Self {
        self.domain_max = Some(value);
        self
    }
}

/// Multi-modal objective with one constraint on `[0, 6]²`.
pub fn p1() -> Problem {
    Problem::new("p1", Bounds::cube(2, 0.0, 6.0).unwrap(), 1, |x| {
        let f = (2.0 * x[0]).cos() * x[1].cos() + x[0].sin();
        let g = x[0].cos() * x[1].cos() - x[0].sin() * x[1].sin() + 0.5;
        (f, vec![g])
    })
}

/// Linear objective with two constraints on `[0, 1]²`.
pub fn p2() -> Problem {
    Problem::new("p2", Bounds::cube(2, 0.0, 1.0).unwrap(), 2, |x| {
        let f = x[0] + x[1];
        let g1 = 0.5 * (2.0 * PI * (2.0 * x[1] - x[0] * x[0])).sin() - x[0] - 2.0 * x[1] + 1.5;
        let g2 = x[0] * x[0] + x[1] * x[1] - 1.5;
        (f, vec![g1, g2])
    })
}

/// Multi-modal 4-d objective with one constraint on `[−5, 5]⁴`.
pub fn p3() -> Problem {
    Problem::new("p3", Bounds::cube(4, -5.0, 5.0).unwrap(), 1, |x| {
        let f = 0.5 * x.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>();
        let g = -0.5 + (x[0] + 2.0 * x[1]).sin() - x[2].cos() * (2.0 * x[3]).cos();
        (f, vec![g])
    })
}

pub const PROBLEM_NAMES: [&str; 3] = ["p1", "p2", "p3"];

/// Looks up a registered problem by name.
pub fn by_name(name: &str) -> Result<Problem> {
    match name {
        "p1" => Ok(p1()),
        "p2" => Ok(p2()),
        "p3" => Ok(p3()),
        _ => Err(CboError::Unknown {
            kind: "problem",
            name: name.into(),
            registered: PROBLEM_NAMES.join(", "),
        }),
    }
}

/// A brute-force optimum together with how it was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub point: Vec<f64>,
    pub resolution: usize,
    pub n_polish: usize,
}

/// Grid nodes per dimension, including both bounds.
fn grid_point(bounds: &Bounds, resolution: usize, mut index: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let i = index % resolution;
        index /= resolution;
        let t = if resolution > 1 {
            i as f64 / (resolution - 1) as f64
        } else {
            0.5
        };
        *o = bounds.lower()[j] + t * (bounds.upper()[j] - bounds.lower()[j]);
    }
}

/// Index-ordered best `keep` grid nodes by `score` (lower is better), skipping
/// nodes where `score` is `None`. Parallel over chunks with a deterministic merge.
fn best_grid_nodes<S>(bounds: &Bounds, resolution: usize, keep: usize, score: S) -> Vec<(f64, usize)>
where
    S: Fn(&[f64]) -> Option<f64> + Sync,
{
    let total = resolution.pow(bounds.dim() as u32);
    let chunk = 1 << 16;
    let n_chunks = total.div_ceil(chunk);
    let merge = |mut a: Vec<(f64, usize)>, b: Vec<(f64, usize)>| {
        a.extend(b);
        a.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        a.truncate(keep);
        a
    };
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut x = vec![0.0; bounds.dim()];
            let mut local: Vec<(f64, usize)> = Vec::new();
            for idx in c * chunk..((c + 1) * chunk).min(total) {
                grid_point(bounds, resolution, idx, &mut x);
                if let Some(s) = score(&x) {
                    local.push((s, idx));
                    if local.len() >= 4 * keep.max(16) {
                        local = merge(local, Vec::new());
                    }
                }
            }
            merge(local, Vec::new())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Vec::new(), merge)
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], bounds: &Bounds) -> Vec<f64> {
    let widths = bounds.widths();
    (0..x.len())
        .map(|j| {
            let h = 1e-7 * widths[j];
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] = (x[j] + h).min(bounds.upper()[j]);
            b[j] = (x[j] - h).max(bounds.lower()[j]);
            (f(&a) - f(&b)) / (a[j] - b[j])
        })
        .collect()
}

/// Ascends `f` from `x0` over the box with finite-difference gradients.
fn ascend<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], bounds: &Bounds, iters: usize) -> Vec<f64> {
    let widths = bounds.widths();
    let lo = vec![0.0; x0.len()];
    let hi = vec![1.0; x0.len()];
    let to_x = |u: &[f64]| -> Vec<f64> { u.iter().enumerate().map(|(j, v)| bounds.lower()[j] + v * widths[j]).collect() };
    let u0: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(j, v)| (v - bounds.lower()[j]) / widths[j])
        .collect();
    let g = |u: &[f64]| {
        let x = to_x(u);
        let v = f(&x);
        let grad = fd_gradient(&f, &x, bounds).iter().zip(&widths).map(|(a, w)| a * w).collect();
        v.is_finite().then_some((v, grad))
    };
    let u = spg_maximize(g, &u0, &lo, &hi, iters).map(|(u, _)| u).unwrap_or(u0);
    let mut x = to_x(&u);
    bounds.project(&mut x);
    x
}

/// Polishes a feasible start with an augmented-Lagrangian local search, then
/// pulls the result back onto the feasible side along the segment to the start.
fn polish_constrained(problem: &Problem, start: &[f64]) -> Option<(f64, Vec<f64>)> {
    let m = problem.n_constraints;
    let mut lambda = vec![0.0; m];
    let mut rho = 10.0;
    let mut x = start.to_vec();
    for _ in 0..8 {
        let lagrangian = |y: &[f64]| {
            let (f, g) = problem.evaluate(y);
            let penalty: f64 = g
                .iter()
                .zip(&lambda)
                .map(|(gi, li)| ((li + rho * gi).max(0.0).powi(2) - li * li) / (2.0 * rho))
                .sum();
            -(f + penalty)
        };
        x = ascend(lagrangian, &x, &problem.bounds, 200);
        let (_, g) = problem.evaluate(&x);
        for (li, gi) in lambda.iter_mut().zip(&g) {
            *li = (*li + rho * gi).max(0.0);
        }
        rho *= 4.0;
    }
    let feasible = |y: &[f64]| problem.evaluate(y).1.iter().all(|g| *g <= 0.0);
    if !feasible(&x) {
        // bisection keeps a feasible endpoint; `start` is feasible
        let (mut a, mut b) = (0.0, 1.0);
        let lerp = |t: f64| -> Vec<f64> { start.iter().zip(&x).map(|(s, e)| s + t * (e - s)).collect() };
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if feasible(&lerp(mid)) {
                a = mid;
            } else {
                b = mid;
            }
        }
        x = lerp(a);
    }
    feasible(&x).then(|| (problem.objective(&x), x))
}

/// Constrained minimum by grid scan plus local polishing of the best feasible nodes.
pub fn constrained_optimum_oracle(problem: &Problem, resolution: usize, n_polish: usize) -> Result<OracleResult> {
    let nodes = best_grid_nodes(&problem.bounds, resolution, n_polish.max(1), |x| {
        let (f, g) = problem.evaluate(x);
        g.iter().all(|gi| *gi <= 0.0).then_some(f)
    });
    let Some(&(f_grid, idx)) = nodes.first() else {
        return Err(CboError::NoFeasibleCell(problem.name.clone()));
    };
    let mut best_x = vec![0.0; problem.dim()];
    grid_point(&problem.bounds, resolution, idx, &mut best_x);
    let mut best = (f_grid, best_x);
    let polished: Vec<Option<(f64, Vec<f64>)>> = nodes
        .par_iter()
        .take(n_polish)
        .map(|&(_, idx)| {
            let mut x = vec![0.0; problem.dim()];
            grid_point(&problem.bounds, resolution, idx, &mut x);
            polish_constrained(problem, &x)
        })
        .collect();
    for (v, x) in polished.into_iter().flatten() {
        if v < best.0 {
            best = (v, x);
        }
    }
    Ok(OracleResult {
        value: best.0,
        point: best.1,
        resolution,
        n_polish,
    })
}

/// Maximum of the objective over the box (constraints ignored).
pub fn domain_max_oracle(problem: &Problem, resolution: usize, n_polish: usize) -> OracleResult {
    let nodes = best_grid_nodes(&problem.bounds, resolution, n_polish.max(1), |x| Some(-problem.objective(x)));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &(neg, idx) in nodes.iter() {
        let mut x = vec![0.0; problem.dim()];
        grid_point(&problem.bounds, resolution, idx, &mut x);
        let x = if n_polish > 0 {
            ascend(|y| problem.objective(y), &x, &problem.bounds, 200)
        } else {
            x
        };
        let v = problem.objective(&x).max(-neg);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, x));
        }
    }
    let (value, point) = best.expect("grid has at least one node");
    OracleResult {
        value,
        point,
        resolution,
        n_polish,
    }
}
