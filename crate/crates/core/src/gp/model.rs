use super::kernel::KernelParams;
use super::linalg::{self, cholesky_with_jitter, dot, MAX_JITTER_REL};
use crate::error::{CboError, Result};
use nalgebra::{DMatrix, DVector};

/// Minimum separation below which two inputs are treated as duplicates.
pub const MIN_SEPARATION: f64 = 1e-8;
/// Distance from sampled points inside which σ-gradients are reported as degenerate.
pub const DEGENERACY_RADIUS: f64 = 1e-6;
const SIGMA_FLOOR: f64 = 1e-10;

/// A fitted noise-free GP posterior with constant zero prior mean.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelParams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    chol: DMatrix<f64>,
    weights: Vec<f64>,
    jitter: f64,
    near_duplicate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrads {
    pub mean: f64,
    pub variance: f64,
    pub dmean: Vec<f64>,
    pub dsigma: Vec<f64>,
    /// Set when σ is too small (or `x` too close to data) for a usable σ-gradient.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct JointPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub near_duplicate: bool,
}

/// Joint moments of a batch together with their derivatives in the batch locations.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `dmean[(j, l)] = ∂μ(x_j)/∂x_{j,l}`.
    pub dmean: DMatrix<f64>,
    /// `dcov_row[j][(l, i)] = ∂Σ_{j,i}/∂x_{j,l}` for `i ≠ j`, and half of
    /// `∂Σ_{j,j}/∂x_{j,l}` on the diagonal, so that `∂Σ = e_j cᵀ + c e_jᵀ`.
    pub dcov_row: Vec<DMatrix<f64>>,
    pub near_duplicate: bool,
}

/// Derivatives of a stage-one posterior at a fixed point with respect to the
/// fantasized batch locations (`q × d`).
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub mean: f64,
    pub sigma: f64,
    pub dmean: DMatrix<f64>,
    pub dsigma: DMatrix<f64>,
    pub degenerate: bool,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn has_near_duplicate(points: &[Vec<f64>]) -> bool {
    let tol = MIN_SEPARATION * MIN_SEPARATION;
    points
        .iter()
        .enumerate()
        .any(|(i, a)| points[i + 1..].iter().any(|b| sq_dist(a, b) < tol))
}

impl GpModel {
    /// Builds the posterior for `(inputs, targets)` under `kernel`.
    pub fn new(kernel: KernelParams, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(CboError::InvalidArgument(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != kernel.dim()) {
            return Err(CboError::DimensionMismatch {
                expected: kernel.dim(),
                got: bad.len(),
            });
        }
        let near_duplicate = has_near_duplicate(&inputs);
        if near_duplicate {
            log::warn!("near-duplicate GP inputs; relying on jitter");
        }
        let n = inputs.len();
        let kmat = DMatrix::from_fn(n, n, |i, j| kernel.k(&inputs[i], &inputs[j]));
        let (chol, jitter) = cholesky_with_jitter(&kmat, kernel.signal_variance, MAX_JITTER_REL)?;
        let mut weights = targets.clone();
        linalg::cholesky_solve(&chol, &mut weights);
        Ok(GpModel {
            kernel,
            inputs,
            targets,
            chol,
            weights,
            jitter,
            near_duplicate,
        })
    }

    /// Model with no data: the zero-mean prior.
    pub fn prior(kernel: KernelParams) -> Self {
        GpModel {
            kernel,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            weights: Vec::new(),
            jitter: 0.0,
            near_duplicate: false,
        }
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn near_duplicate(&self) -> bool {
        self.near_duplicate
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha_weights(&self) -> &[f64] {
        &self.weights
    }

    fn cross_cov(&self, x: &[f64]) -> Vec<f64> {
        self.inputs.iter().map(|xi| self.kernel.k(x, xi)).collect()
    }

    /// Distance from `x` to the nearest training input (∞ for an empty model).
    pub fn min_distance(&self, x: &[f64]) -> f64 {
        self.inputs
            .iter()
            .map(|xi| sq_dist(x, xi))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// True when `x` coincides with a training input; the noise-free
    /// posterior variance there is exactly zero, whatever the jitter.
    fn coincides(&self, x: &[f64]) -> bool {
        self.coincident_target(x).is_some()
    }

    /// Target of the training input `x` coincides with. The noise-free
    /// posterior mean there is that target, whereas the jittered solve is
    /// off by `jitter · weight`.
    fn coincident_target(&self, x: &[f64]) -> Option<f64> {
        let tol = MIN_SEPARATION * MIN_SEPARATION;
        self.inputs
            .iter()
            .position(|xi| sq_dist(x, xi) < tol)
            .map(|i| self.targets[i])
    }

    pub fn posterior(&self, x: &[f64]) -> Posterior {
        let sv = self.kernel.signal_variance;
        if self.is_empty() {
            return Posterior { mean: 0.0, variance: sv };
        }
        if let Some(mean) = self.coincident_target(x) {
            return Posterior { mean, variance: 0.0 };
        }
        let mut v = self.cross_cov(x);
        let mean = dot(&v, &self.weights);
        linalg::forward_solve(&self.chol, &mut v);
        let variance = (sv - dot(&v, &v)).max(0.0);
        Posterior { mean, variance }
    }

    /// Posterior mean/variance with gradients of the mean and standard deviation.
    pub fn posterior_grads(&self, x: &[f64]) -> PosteriorGrads {
        let d = self.dim();
        let sv = self.kernel.signal_variance;
        if self.is_empty() {
            return PosteriorGrads {
                mean: 0.0,
                variance: sv,
                dmean: vec![0.0; d],
                dsigma: vec![0.0; d],
                degenerate: false,
            };
        }
        let n = self.len();
        let kx = self.cross_cov(x);
        let mut dk = vec![0.0; n * d];
        for (t, xi) in self.inputs.iter().enumerate() {
            self.kernel.grad_into(x, xi, kx[t], &mut dk[t * d..(t + 1) * d]);
        }
        let mean = self.coincident_target(x).unwrap_or_else(|| dot(&kx, &self.weights));
        let mut a = kx.clone();
        linalg::forward_solve(&self.chol, &mut a);
        let variance = if self.coincides(x) { 0.0 } else { (sv - dot(&a, &a)).max(0.0) };
        linalg::backward_solve_transpose(&self.chol, &mut a);
        let mut dmean = vec![0.0; d];
        let mut dvar = vec![0.0; d];
        for t in 0..n {
            for l in 0..d {
                dmean[l] += dk[t * d + l] * self.weights[t];
                dvar[l] -= 2.0 * dk[t * d + l] * a[t];
            }
        }
        let sigma = variance.sqrt();
        let degenerate = sigma <= SIGMA_FLOOR || self.min_distance(x) < DEGENERACY_RADIUS;
        let dsigma = if degenerate {
            vec![0.0; d]
        } else {
            dvar.iter().map(|g| g / (2.0 * sigma)).collect()
        };
        PosteriorGrads {
            mean,
            variance,
            dmean,
            dsigma,
            degenerate,
        }
    }

    /// Joint posterior over a batch.
    pub fn posterior_joint(&self, xs: &[Vec<f64>]) -> JointPosterior {
        let m = self.batch_moments_impl(xs, false);
        JointPosterior {
            mean: m.mean,
            cov: m.cov,
            near_duplicate: m.near_duplicate,
        }
    }

    /// Joint posterior over a batch together with location derivatives.
    pub fn batch_moments(&self, xs: &[Vec<f64>]) -> BatchMoments {
        self.batch_moments_impl(xs, true)
    }

    fn batch_moments_impl(&self, xs: &[Vec<f64>], with_grads: bool) -> BatchMoments {
        let q = xs.len();
        let d = self.dim();
        let n = self.len();
        let near_duplicate = has_near_duplicate(xs);
        if near_duplicate {
            log::warn!("near-duplicate batch points; covariance relies on jitter");
        }
        // a_j = K⁻¹ k_D(x_j), v_j = L⁻¹ k_D(x_j)
        let kd: Vec<Vec<f64>> = xs.iter().map(|x| self.cross_cov(x)).collect();
        let vs: Vec<Vec<f64>> = kd
            .iter()
            .map(|k| {
                let mut v = k.clone();
                linalg::forward_solve(&self.chol, &mut v);
                v
            })
            .collect();
        let mean = DVector::from_iterator(
            q,
            xs.iter()
                .zip(&kd)
                .map(|(x, k)| self.coincident_target(x).unwrap_or_else(|| dot(k, &self.weights))),
        );
        let mut cov = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let c = self.kernel.k(&xs[i], &xs[j]) - dot(&vs[i], &vs[j]);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
            cov[(i, i)] = cov[(i, i)].max(0.0);
        }
        for (i, x) in xs.iter().enumerate() {
            if self.coincides(x) {
                cov.row_mut(i).fill(0.0);
                cov.column_mut(i).fill(0.0);
            }
        }
        let mut dmean = DMatrix::zeros(q, d);
        let mut dcov_row = Vec::new();
        if with_grads {
            let a: Vec<Vec<f64>> = vs
                .iter()
                .map(|v| {
                    let mut a = v.clone();
                    linalg::backward_solve_transpose(&self.chol, &mut a);
                    a
                })
                .collect();
            let mut g = vec![0.0; d];
            for j in 0..q {
                // dk[t][l] = ∂k(x_j, d_t)/∂x_{j,l}
                let mut dk = vec![0.0; n * d];
                for (t, dt) in self.inputs.iter().enumerate() {
                    self.kernel.grad_into(&xs[j], dt, kd[j][t], &mut dk[t * d..(t + 1) * d]);
                }
                for l in 0..d {
                    dmean[(j, l)] = (0..n).map(|t| dk[t * d + l] * self.weights[t]).sum();
                }
                let mut row = DMatrix::zeros(d, q);
                for i in 0..q {
                    let kij = self.kernel.k(&xs[j], &xs[i]);
                    self.kernel.grad_into(&xs[j], &xs[i], kij, &mut g);
                    for l in 0..d {
                        let corr: f64 = (0..n).map(|t| dk[t * d + l] * a[i][t]).sum();
                        row[(l, i)] = g[l] - corr;
                    }
                }
                dcov_row.push(row);
            }
        }
        BatchMoments {
            mean,
            cov,
            dmean,
            dcov_row,
            near_duplicate,
        }
    }

    /// Posterior given the current data plus `(xs, ys)`; full refactorization.
    pub fn condition_on_fantasy(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<GpModel> {
        if xs.len() != ys.len() {
            return Err(CboError::InvalidArgument(format!(
                "{} fantasy points but {} values",
                xs.len(),
                ys.len()
            )));
        }
        let mut inputs = self.inputs.clone();
        inputs.extend(xs.iter().cloned());
        let mut targets = self.targets.clone();
        targets.extend_from_slice(ys);
        GpModel::new(self.kernel.clone(), inputs, targets)
    }

    /// Gradients of `μ₁(x₂)` and `σ₁(x₂)` with respect to the batch `xs`,
    /// where the stage-one model conditions on `(xs, ys)` and `ys` is held fixed.
    pub fn fantasy_posterior_grads_wrt_batch(&self, xs: &[Vec<f64>], ys: &[f64], x2: &[f64]) -> Result<BatchGrads> {
        let stage1 = self.condition_on_fantasy(xs, ys)?;
        Ok(stage1.trailing_input_grads(xs.len(), x2))
    }

    /// On a model whose last `q` inputs are a fantasized batch, the gradients of
    /// the posterior mean and standard deviation at `x2` with respect to those inputs
    /// (targets held fixed).
    pub fn trailing_input_grads(&self, q: usize, x2: &[f64]) -> BatchGrads {
        let n_total = self.len();
        let d = self.dim();
        assert!(q <= n_total);
        let offset = n_total - q;
        let post = self.posterior(x2);
        let sigma = post.sd();
        let mut dmean = DMatrix::zeros(q, d);
        let mut dsigma = DMatrix::zeros(q, d);
        let degenerate = self.min_distance(x2) < DEGENERACY_RADIUS || sigma <= SIGMA_FLOOR;
        if degenerate {
            return BatchGrads {
                mean: post.mean,
                sigma,
                dmean,
                dsigma,
                degenerate,
            };
        }
        let kx = self.cross_cov(x2);
        let mut a = kx.clone();
        linalg::cholesky_solve(&self.chol, &mut a);
        let w = &self.weights;
        let mut gj = vec![0.0; d];
        let mut c = vec![0.0; n_total * d];
        for j in 0..q {
            let idx = offset + j;
            let xj = &self.inputs[idx];
            // ∂k(x₂, x_j)/∂x_j
            self.kernel.grad_into(xj, x2, kx[idx], &mut gj);
            // c[i][l] = ∂k(x_j, z_i)/∂x_{j,l}, zero at i = idx
            for (i, zi) in self.inputs.iter().enumerate() {
                let slot = &mut c[i * d..(i + 1) * d];
                if i == idx {
                    slot.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    let kij = self.kernel.k(xj, zi);
                    self.kernel.grad_into(xj, zi, kij, slot);
                }
            }
            for l in 0..d {
                let mut cw = 0.0;
                let mut ca = 0.0;
                for i in 0..n_total {
                    cw += c[i * d + l] * w[i];
                    ca += c[i * d + l] * a[i];
                }
                dmean[(j, l)] = gj[l] * w[idx] - (a[idx] * cw + ca * w[idx]);
                let dvar = -2.0 * gj[l] * a[idx] + 2.0 * a[idx] * ca;
                dsigma[(j, l)] = dvar / (2.0 * sigma);
            }
        }
        BatchGrads {
            mean: post.mean,
            sigma,
            dmean,
            dsigma,
            degenerate,
        }
    }
}
