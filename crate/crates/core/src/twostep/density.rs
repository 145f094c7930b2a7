//! The joint stage-zero law of the fantasized batch values and its score.
//!
//! `Y = (Y_f, Y_g,1, …)` is block-diagonal Gaussian: one block per model,
//! each with the posterior mean and covariance of that model at `X₁`.

use crate::error::Result;
use crate::gp::linalg::{cholesky_with_jitter, forward_solve, MAX_JITTER_REL};
use crate::gp::{GpModel, PosteriorBundle};
use crate::normal::LN_SQRT_2PI;
use crate::qmc::ScrambledSobol;
use nalgebra::{DMatrix, DVector};

/// Fantasized objective and constraint values at a candidate batch.
///
/// `y_g` holds one vector per *active* constraint of the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct FantasySample {
    pub y_f: Vec<f64>,
    pub y_g: Vec<Vec<f64>>,
    pub log_density: f64,
    pub f1_star: f64,
}

/// Stage-one incumbent: the stage-zero incumbent improved by any fantasy-feasible batch point.
pub fn stage_one_incumbent(f0_star: f64, y_f: &[f64], y_g: &[Vec<f64>]) -> f64 {
    y_f.iter()
        .enumerate()
        .filter(|(i, _)| y_g.iter().all(|g| g[*i] <= 0.0))
        .fold(f0_star, |best, (_, v)| best.min(*v))
}

#[derive(Debug, Clone)]
struct Block {
    mean: DVector<f64>,
    /// Factor of the jittered covariance; defines the density.
    chol: DMatrix<f64>,
    /// Positive-semidefinite square root of the exact covariance, used for
    /// sampling when no gradients are needed so that coincident points stay
    /// perfectly correlated.
    root: Option<DMatrix<f64>>,
    log_det_half: f64,
    /// Explicit inverse of the jittered covariance (present when gradients were requested).
    cov_inv: Option<DMatrix<f64>>,
    dmean: DMatrix<f64>,
    dcov_row: Vec<DMatrix<f64>>,
}

impl Block {
    fn new(model: &GpModel, x1: &[Vec<f64>], with_grads: bool) -> Result<Self> {
        let (mean, cov, dmean, dcov_row) = if with_grads {
            let m = model.batch_moments(x1);
            (m.mean, m.cov, m.dmean, m.dcov_row)
        } else {
            let j = model.posterior_joint(x1);
            (j.mean, j.cov, DMatrix::zeros(0, 0), Vec::new())
        };
        let (chol, _) = cholesky_with_jitter(&cov, model.kernel().signal_variance, MAX_JITTER_REL)?;
        let log_det_half = (0..chol.nrows()).map(|i| chol[(i, i)].ln()).sum();
        let root = (!with_grads).then(|| {
            let eig = cov.clone().symmetric_eigen();
            let mut r = eig.eigenvectors;
            for (mut col, lam) in r.column_iter_mut().zip(eig.eigenvalues.iter()) {
                col *= lam.max(0.0).sqrt();
            }
            r
        });
        let cov_inv = with_grads.then(|| {
            let q = chol.nrows();
            let mut inv = DMatrix::zeros(q, q);
            for c in 0..q {
                let mut e = vec![0.0; q];
                e[c] = 1.0;
                crate::gp::linalg::cholesky_solve(&chol, &mut e);
                inv.column_mut(c).copy_from_slice(&e);
            }
            inv
        });
        Ok(Block {
            mean,
            chol,
            root,
            log_det_half,
            cov_inv,
            dmean,
            dcov_row,
        })
    }

    fn q(&self) -> usize {
        self.mean.len()
    }

    fn values(&self, z: &[f64]) -> Vec<f64> {
        let q = self.q();
        if let Some(r) = &self.root {
            return (0..q)
                .map(|i| self.mean[i] + (0..q).map(|k| r[(i, k)] * z[k]).sum::<f64>())
                .collect();
        }
        (0..q)
            .map(|i| self.mean[i] + (0..=i).map(|k| self.chol[(i, k)] * z[k]).sum::<f64>())
            .collect()
    }

    fn log_density(&self, y: &[f64]) -> f64 {
        let mut r: Vec<f64> = y.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        forward_solve(&self.chol, &mut r);
        self.log_density_standardized(&r)
    }

    fn log_density_standardized(&self, z: &[f64]) -> f64 {
        -0.5 * z.iter().map(|v| v * v).sum::<f64>() - self.log_det_half - self.q() as f64 * LN_SQRT_2PI
    }

    /// Adds this block's contribution to the score `∂ log p / ∂X₁`.
    fn add_score(&self, y: &[f64], score: &mut DMatrix<f64>) {
        let inv = self.cov_inv.as_ref().expect("block built without gradients");
        let q = self.q();
        let d = score.ncols();
        let r = DVector::from_iterator(q, y.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let u = inv * &r;
        for j in 0..q {
            let row = &self.dcov_row[j];
            for l in 0..d {
                let mut cu = 0.0;
                let mut inv_c = 0.0;
                for i in 0..q {
                    let c = row[(l, i)];
                    cu += c * u[i];
                    inv_c += inv[(j, i)] * c;
                }
                score[(j, l)] += self.dmean[(j, l)] * u[j] + u[j] * cu - inv_c;
            }
        }
    }
}

/// Law of `Y` at a fixed batch, with the objective block first and one block
/// per active constraint.
#[derive(Debug, Clone)]
pub struct FantasyDistribution {
    q: usize,
    d: usize,
    blocks: Vec<Block>,
}

impl FantasyDistribution {
    pub fn new(bundle: &PosteriorBundle, x1: &[Vec<f64>]) -> Result<Self> {
        Self::build(bundle, x1, false)
    }

    /// Also prepares the location derivatives needed by [`Self::score`].
    pub fn with_grads(bundle: &PosteriorBundle, x1: &[Vec<f64>]) -> Result<Self> {
        Self::build(bundle, x1, true)
    }

    fn build(bundle: &PosteriorBundle, x1: &[Vec<f64>], with_grads: bool) -> Result<Self> {
        let mut blocks = vec![Block::new(&bundle.objective, x1, with_grads)?];
        for c in bundle.active_constraints() {
            blocks.push(Block::new(c, x1, with_grads)?);
        }
        Ok(FantasyDistribution {
            q: x1.len(),
            d: bundle.dim(),
            blocks,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.q
    }

    /// Dimension of the standard normal input, `(1 + M)·q`.
    pub fn dims(&self) -> usize {
        self.q * self.blocks.len()
    }

    /// Maps standard normal inputs to `(y_f, y_g)`.
    pub fn transform(&self, z: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let q = self.q;
        let mut it = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| blk.values(&z[b * q..(b + 1) * q]));
        let y_f = it.next().expect("objective block");
        (y_f, it.collect())
    }

    pub fn log_density(&self, y_f: &[f64], y_g: &[Vec<f64>]) -> f64 {
        let mut total = self.blocks[0].log_density(y_f);
        for (blk, y) in self.blocks[1..].iter().zip(y_g) {
            total += blk.log_density(y);
        }
        total
    }

    /// `∇_{X₁} log p(y; X₁)`, shape `q × d`.
    pub fn score(&self, y_f: &[f64], y_g: &[Vec<f64>]) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.q, self.d);
        self.blocks[0].add_score(y_f, &mut s);
        for (blk, y) in self.blocks[1..].iter().zip(y_g) {
            blk.add_score(y, &mut s);
        }
        s
    }

    /// Builds a sample from standard normal inputs.
    pub fn sample_from_normals(&self, z: &[f64], f0_star: f64) -> FantasySample {
        let q = self.q;
        let (y_f, y_g) = self.transform(z);
        let log_density = if self.blocks[0].root.is_some() {
            self.log_density(&y_f, &y_g)
        } else {
            self.blocks
                .iter()
                .enumerate()
                .map(|(b, blk)| blk.log_density_standardized(&z[b * q..(b + 1) * q]))
                .sum()
        };
        let f1_star = stage_one_incumbent(f0_star, &y_f, &y_g);
        FantasySample {
            y_f,
            y_g,
            log_density,
            f1_star,
        }
    }

    /// Sample `index` of the scrambled Sobol stream `sobol` (of matching dimension).
    pub fn qmc_sample(&self, sobol: &ScrambledSobol, index: u32, f0_star: f64) -> FantasySample {
        let mut z = vec![0.0; self.dims()];
        sobol.normal(index, &mut z);
        self.sample_from_normals(&z, f0_star)
    }
}
