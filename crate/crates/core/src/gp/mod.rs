//! Noise-free Gaussian process regression with ARD squared-exponential kernels.

mod fit;
mod kernel;
pub(crate) mod linalg;
mod model;

pub(crate) use fit::spg_maximize;
pub use fit::{fit_hyperparameters, log_marginal_likelihood, targets_degenerate, FitOptions, FitReport};
pub use kernel::KernelParams;
pub(crate) use model::sq_dist;
pub use model::{
    BatchGrads, BatchMoments, GpModel, JointPosterior, Posterior, PosteriorGrads, DEGENERACY_RADIUS, MIN_SEPARATION,
};

use crate::error::{CboError, Result};
use serde::{Deserialize, Serialize};

/// Best feasible observation so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub value: f64,
    pub location: Vec<f64>,
}

/// Minimum objective value over rows whose every constraint value is ≤ 0.
pub fn best_feasible(inputs: &[Vec<f64>], f: &[f64], g: &[Vec<f64>]) -> Option<Incumbent> {
    let mut best: Option<Incumbent> = None;
    for (i, x) in inputs.iter().enumerate() {
        if g.iter().all(|gm| gm[i] <= 0.0) && best.as_ref().is_none_or(|b| f[i] < b.value) {
            best = Some(Incumbent {
                value: f[i],
                location: x.clone(),
            });
        }
    }
    best
}

/// Objective GP plus independent constraint GPs sharing one design.
#[derive(Debug, Clone)]
pub struct PosteriorBundle {
    pub objective: GpModel,
    pub constraints: Vec<GpModel>,
    certain_feasible: Vec<bool>,
    incumbent: Option<Incumbent>,
}

/// Kernel parameters of every model in a bundle, objective first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleParams {
    pub objective: KernelParams,
    pub constraints: Vec<KernelParams>,
}

impl PosteriorBundle {
    /// Assembles a bundle; the incumbent is recomputed from the shared data.
    pub fn new(objective: GpModel, constraints: Vec<GpModel>) -> Result<Self> {
        for c in &constraints {
            if c.inputs() != objective.inputs() {
                return Err(CboError::InvalidArgument(
                    "objective and constraint models must share training inputs".into(),
                ));
            }
        }
        let g: Vec<Vec<f64>> = constraints.iter().map(|c| c.targets().to_vec()).collect();
        let incumbent = best_feasible(objective.inputs(), objective.targets(), &g);
        let certain_feasible = vec![false; constraints.len()];
        Ok(PosteriorBundle {
            objective,
            constraints,
            certain_feasible,
            incumbent,
        })
    }

    /// Builds every model from data with given kernel parameters.
    pub fn from_data(inputs: &[Vec<f64>], f: &[f64], g: &[Vec<f64>], params: &BundleParams) -> Result<Self> {
        if g.len() != params.constraints.len() {
            return Err(CboError::InvalidArgument(format!(
                "{} constraint series but {} constraint kernels",
                g.len(),
                params.constraints.len()
            )));
        }
        let objective = GpModel::new(params.objective.clone(), inputs.to_vec(), f.to_vec())?;
        let constraints = g
            .iter()
            .zip(&params.constraints)
            .map(|(gm, p)| GpModel::new(p.clone(), inputs.to_vec(), gm.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut bundle = PosteriorBundle::new(objective, constraints)?;
        bundle.flag_certain_feasible();
        Ok(bundle)
    }

    /// Fits hyperparameters for every model and builds the bundle.
    pub fn fit(
        inputs: &[Vec<f64>],
        f: &[f64],
        g: &[Vec<f64>],
        widths: &[f64],
        options: &FitOptions,
        warm: Option<&BundleParams>,
    ) -> Result<(Self, BundleParams)> {
        let fit_one = |y: &[f64], stream: u64, w: Option<&KernelParams>| {
            let opts = FitOptions {
                seed: crate::qmc::derive_seed(options.seed, stream),
                ..options.clone()
            };
            fit_hyperparameters(inputs, y, widths, &opts, w).params
        };
        let params = BundleParams {
            objective: fit_one(f, 0, warm.map(|w| &w.objective)),
            constraints: g
                .iter()
                .enumerate()
                .map(|(m, gm)| fit_one(gm, m as u64 + 1, warm.and_then(|w| w.constraints.get(m))))
                .collect(),
        };
        let bundle = PosteriorBundle::from_data(inputs, f, g, &params)?;
        Ok((bundle, params))
    }

    /// Marks constraints whose observations are all identical and strictly
    /// negative (n ≥ 2) as certainly feasible; they drop out of every acquisition.
    fn flag_certain_feasible(&mut self) {
        for (flag, c) in self.certain_feasible.iter_mut().zip(&self.constraints) {
            let t = c.targets();
            *flag = t.len() >= 2 && targets_degenerate(t) && t[0] < 0.0;
        }
    }

    pub fn set_certain_feasible(&mut self, index: usize, value: bool) {
        self.certain_feasible[index] = value;
    }

    pub fn is_certain_feasible(&self, index: usize) -> bool {
        self.certain_feasible[index]
    }

    /// Constraint models that still carry uncertainty.
    pub fn active_constraints(&self) -> impl Iterator<Item = &GpModel> + Clone {
        self.constraints
            .iter()
            .zip(&self.certain_feasible)
            .filter(|(_, &c)| !c)
            .map(|(m, _)| m)
    }

    pub fn n_active_constraints(&self) -> usize {
        self.certain_feasible.iter().filter(|c| !**c).count()
    }

    pub fn incumbent(&self) -> Option<&Incumbent> {
        self.incumbent.as_ref()
    }

    pub fn set_incumbent(&mut self, incumbent: Option<Incumbent>) {
        self.incumbent = incumbent;
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    pub fn params(&self) -> BundleParams {
        BundleParams {
            objective: self.objective.kernel().clone(),
            constraints: self.constraints.iter().map(|c| c.kernel().clone()).collect(),
        }
    }
}
