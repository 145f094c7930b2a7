//! Small dense helpers around a lower Cholesky factor.

use crate::error::{CboError, Result};
use nalgebra::{Cholesky, DMatrix};

pub const JITTER_REL: f64 = 1e-8;
pub const MAX_JITTER_REL: f64 = 1e-2;

/// Factorizes `k + jitter·I`, starting from `JITTER_REL·scale` and escalating
/// by ×10 until `max_rel·scale`. Returns the lower factor and the jitter used.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, scale: f64, max_rel: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    let mut jitter = JITTER_REL * scale;
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
        if jitter > max_rel * scale * (1.0 + 1e-12) {
            return Err(CboError::Factorization { jitter: jitter / 10.0 });
        }
    }
}

/// Solves `L x = b` in place.
#[inline]
pub fn forward_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let s = l.as_slice();
    for j in 0..n {
        let xj = b[j] / s[j + j * n];
        b[j] = xj;
        if xj != 0.0 {
            let col = &s[j * n..(j + 1) * n];
            for i in j + 1..n {
                b[i] -= col[i] * xj;
            }
        }
    }
}

/// Solves `Lᵀ x = b` in place.
#[inline]
pub fn backward_solve_transpose(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let s = l.as_slice();
    for i in (0..n).rev() {
        let col = &s[i * n..(i + 1) * n];
        let mut acc = b[i];
        for k in i + 1..n {
            acc -= col[k] * b[k];
        }
        b[i] = acc / col[i];
    }
}

/// Solves `(L Lᵀ) x = b` in place.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    forward_solve(l, b);
    backward_solve_transpose(l, b);
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
