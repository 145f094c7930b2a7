use crate::error::{CboError, Result};
use serde::{Deserialize, Serialize};

/// Settings of the 2-OPT-C optimizer.
///
/// Step sizes follow `a / (A + t)^γ`, multiplied by each dimension's width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStepConfig {
    pub n_restarts: usize,
    /// Latin-hypercube batches screened by value to pick restart starts.
    pub n_start_candidates: usize,
    /// Samples per candidate in that screen.
    pub n_start_samples: usize,
    /// Also screen the myopic (EIC) maximizer as a start.
    pub myopic_start: bool,
    pub n_sga_steps: usize,
    pub n_grad_samples: usize,
    /// The inner problem is re-solved on every `inner_solve_period`-th gradient sample.
    pub inner_solve_period: usize,
    pub inner_restarts: usize,
    pub inner_steps: usize,
    /// Low-discrepancy points screened before the inner ascents.
    pub inner_screen: usize,
    pub step_a: f64,
    pub step_offset: f64,
    pub step_gamma: f64,
    /// Samples used to compare restarts.
    pub n_value_samples: usize,
    /// Samples used to choose between the two best restarts.
    pub n_final_value_samples: usize,
    /// Exclusion radius around sampled points for the inner maximization.
    pub delta: f64,
    pub qmc_scramble_seed: u64,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        TwoStepConfig {
            n_restarts: 10,
            n_start_candidates: 64,
            n_start_samples: 32,
            myopic_start: true,
            n_sga_steps: 50,
            n_grad_samples: 32,
            inner_solve_period: 2,
            inner_restarts: 5,
            inner_steps: 100,
            inner_screen: 256,
            step_a: 0.3,
            step_offset: 2.0,
            step_gamma: 0.7,
            n_value_samples: 512,
            n_final_value_samples: 8192,
            delta: 0.0,
            qmc_scramble_seed: 0,
        }
    }
}

impl TwoStepConfig {
    /// A much cheaper setting for single-core benchmark runs.
    pub fn desk() -> Self {
        TwoStepConfig {
            n_restarts: 3,
            n_start_candidates: 32,
            n_start_samples: 16,
            n_sga_steps: 15,
            n_grad_samples: 16,
            inner_solve_period: 2,
            inner_restarts: 2,
            inner_steps: 25,
            inner_screen: 48,
            n_value_samples: 64,
            n_final_value_samples: 256,
            ..TwoStepConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_restarts", self.n_restarts),
            ("n_start_samples", self.n_start_samples),
            ("n_sga_steps", self.n_sga_steps),
            ("n_grad_samples", self.n_grad_samples),
            ("inner_solve_period", self.inner_solve_period),
            ("inner_restarts", self.inner_restarts),
            ("inner_screen", self.inner_screen),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CboError::Config(format!("{name} must be at least 1")));
        }
        if self.n_value_samples < 2 || self.n_final_value_samples < 2 {
            return Err(CboError::Config("value sample counts must be at least 2".into()));
        }
        if self.step_a.is_nan() || self.step_a <= 0.0 || self.step_offset.is_nan() || self.step_offset < 0.0 {
            return Err(CboError::Config("step_a must be positive and step_offset nonnegative".into()));
        }
        if !(self.step_gamma > 0.5 && self.step_gamma <= 1.0) {
            return Err(CboError::Config("step_gamma must lie in (0.5, 1]".into()));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(CboError::Config("delta must be nonnegative".into()));
        }
        Ok(())
    }

    pub(crate) fn step_size(&self, t: usize) -> f64 {
        self.step_a / (self.step_offset + t as f64).powf(self.step_gamma)
    }
}
