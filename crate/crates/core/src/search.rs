//! Multistart projected ascent over a box, shared by the acquisition optimizers.

use crate::bounds::Bounds;
use crate::gp::{spg_maximize, sq_dist};

/// Minimum unit-cube distance between ascent starts.
pub const START_SEPARATION: f64 = 0.1;

/// Screens `candidates` by value, then runs projected spectral-gradient ascent
/// for at most `steps` iterations from `n_ascents` of them: the best ones that
/// lie at least `START_SEPARATION` apart in unit-cube coordinates, topped up
/// with the best remaining ones when too few are separated.
///
/// `f` returns `(value, gradient)` in the original coordinates; the ascent
/// runs in unit-cube coordinates so that step lengths are scale-free.
/// Ties keep the earliest candidate, so the result is deterministic.
pub fn multistart_maximize<F>(
    bounds: &Bounds,
    candidates: &[Vec<f64>],
    n_ascents: usize,
    steps: usize,
    f: F,
) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let d = bounds.dim();
    let widths = bounds.widths();
    let lower = bounds.lower();
    let to_unit = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - lower[j]) / widths[j]).collect() };
    let from_unit = |u: &[f64]| -> Vec<f64> { (0..d).map(|j| lower[j] + u[j] * widths[j]).collect() };
    let g = |u: &[f64]| {
        let (v, mut grad) = f(&from_unit(u))?;
        if !v.is_finite() {
            return None;
        }
        for (gj, w) in grad.iter_mut().zip(&widths) {
            *gj *= w;
        }
        Some((v, grad))
    };

    let mut screened: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, x)| f(x).map(|(v, _)| (i, v)))
        .filter(|(_, v)| v.is_finite())
        .collect();
    screened.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let n_starts = n_ascents.max(1).min(screened.len());
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n_starts);
    let mut taken = vec![false; screened.len()];
    for (k, &(i, v)) in screened.iter().enumerate() {
        if starts.len() == n_starts {
            break;
        }
        let u = to_unit(&candidates[i]);
        if starts
            .iter()
            .all(|(s, _)| sq_dist(s, &u) >= START_SEPARATION * START_SEPARATION)
        {
            starts.push((u, v));
            taken[k] = true;
        }
    }
    for (k, &(i, v)) in screened.iter().enumerate() {
        if starts.len() == n_starts {
            break;
        }
        if !taken[k] {
            starts.push((to_unit(&candidates[i]), v));
        }
    }

    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (start, v0) in starts {
        let (u, v) = if steps > 0 {
            spg_maximize(g, &start, &lo, &hi, steps).unwrap_or((start, v0))
        } else {
            (start, v0)
        };
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((u, v));
        }
    }
    best.map(|(u, v)| {
        let mut x = from_unit(&u);
        bounds.project(&mut x);
        (x, v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum_of_concave_quadratic() {
        let bounds = Bounds::new(vec![0.0, -10.0], vec![4.0, 10.0]).unwrap();
        let f = |x: &[f64]| {
            let v = -(x[0] - 1.5).powi(2) - 0.1 * (x[1] + 3.0).powi(2);
            Some((v, vec![-2.0 * (x[0] - 1.5), -0.2 * (x[1] + 3.0)]))
        };
        let starts = vec![vec![0.0, 0.0], vec![4.0, 10.0]];
        let (x, v) = multistart_maximize(&bounds, &starts, 2, 100, f).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-4 && (x[1] + 3.0).abs() < 1e-3, "{x:?}");
        assert!(v > -1e-6);
    }

    #[test]
    fn respects_box_when_maximum_is_outside() {
        let bounds = Bounds::cube(1, 0.0, 1.0).unwrap();
        let f = |x: &[f64]| Some((x[0], vec![1.0]));
        let (x, v) = multistart_maximize(&bounds, &[vec![0.2]], 1, 50, f).unwrap();
        assert_eq!(x, vec![1.0]);
        assert_eq!(v, 1.0);
    }
}
