use crate::error::{CboError, Result};
use serde::{Deserialize, Serialize};

/// ARD squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(CboError::InvalidArgument(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(CboError::InvalidArgument(format!(
                "lengthscales must be positive, got {lengthscales:?}"
            )));
        }
        Ok(KernelParams {
            signal_variance,
            lengthscales,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        for v in [x, y] {
            if v.len() != self.dim() {
                return Err(CboError::DimensionMismatch {
                    expected: self.dim(),
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// `k(x, x') = sv · exp(−½ Σ ((x_j − x'_j)/ℓ_j)²)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(x, y)?;
        Ok(self.k(x, y))
    }

    /// Gradient of `k(x, x')` with respect to `x`.
    pub fn grad_first_arg(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check(x, y)?;
        let k = self.k(x, y);
        Ok(x.iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| -k * (a - b) / (l * l))
            .collect())
    }

    #[inline]
    pub(crate) fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            let t = (a - b) / l;
            r2 += t * t;
        }
        self.signal_variance * (-0.5 * r2).exp()
    }

    /// Writes `∂k(x, y)/∂x` into `out` given the precomputed kernel value.
    #[inline]
    pub(crate) fn grad_into(&self, x: &[f64], y: &[f64], k: f64, out: &mut [f64]) {
        for (((o, a), b), l) in out.iter_mut().zip(x).zip(y).zip(&self.lengthscales) {
            *o = -k * (a - b) / (l * l);
        }
    }
}
