//! Jump structure of the sample-average approximation of `E₀[f₀* − f₁*]`.
//!
//! With fixed base samples `(Z_f, Z_g)` the surface
//! `x ↦ (1/M) Σ_m (f₀* − μ₀(x) − σ₀(x) Z_f,m)⁺ · 1{μᶜ₀(x) + σᶜ₀(x) Z_g,m ≤ 0}`
//! jumps wherever a sampled constraint path crosses zero.

use crate::error::Result;
use crate::gp::{BundleParams, KernelParams, PosteriorBundle};
use crate::normal::quantile;
use crate::qmc::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

pub const GRID_POINTS: usize = 2001;
/// Half-width of the window for the local median difference.
pub const MEDIAN_WINDOW: usize = 25;
pub const JUMP_FACTOR: f64 = 5.0;
pub const JUMP_ABS_MIN: f64 = 1e-12;

/// Seeded 1-d, single-constraint instance on `[0, 1]` whose observed
/// constraint values alternate in sign, so sampled constraint paths must
/// cross zero between observations.
pub fn saa_instance(seed: u64) -> Result<PosteriorBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let first_feasible = rng.random::<bool>();
    let mut inputs = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let x = (i as f64 + 0.3 + 0.4 * rng.random::<f64>()) / n as f64;
        let feasible = (i % 2 == 0) == first_feasible;
        let magnitude = 0.3 + 0.7 * rng.random::<f64>();
        inputs.push(vec![x]);
        if feasible {
            g.push(-magnitude);
            f.push(1.0 + 0.5 * rng.random::<f64>());
        } else {
            g.push(magnitude);
            f.push(-rng.random::<f64>());
        }
    }
    let params = BundleParams {
        objective: KernelParams::new(1.0, vec![0.15])?,
        constraints: vec![KernelParams::new(1.0, vec![0.15])?],
    };
    PosteriorBundle::from_data(&inputs, &f, &[g], &params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaaCurve {
    pub n_base_samples: usize,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub jump_count: usize,
    pub max_jump: f64,
}

/// The SAA surface on a regular grid with `n_base_samples` fixed base samples.
pub fn saa_surface(bundle: &PosteriorBundle, n_base_samples: usize, seed: u64) -> SaaCurve {
    let f0 = bundle.incumbent().map(|i| i.value).unwrap_or(f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || quantile(rng.random_range(f64::EPSILON..1.0 - f64::EPSILON));
    let base: Vec<(f64, f64)> = (0..n_base_samples).map(|_| (normal(), normal())).collect();
    let xs: Vec<f64> = (0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64).collect();
    let constraint = &bundle.constraints[0];
    let values: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let pf = bundle.objective.posterior(&[x]);
            let pc = constraint.posterior(&[x]);
            let (sf, sc) = (pf.sd(), pc.sd());
            base.iter()
                .map(|(zf, zg)| {
                    if pc.mean + sc * zg <= 0.0 {
                        (f0 - pf.mean - sf * zf).max(0.0)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / n_base_samples as f64
        })
        .collect();
    let (jump_count, max_jump) = detect_jumps(&values);
    SaaCurve {
        n_base_samples,
        xs,
        values,
        jump_count,
        max_jump,
    }
}

/// Counts adjacent differences exceeding `JUMP_FACTOR` times the local median
/// of the nonzero differences within `±MEDIAN_WINDOW`; returns the count and
/// the largest such difference.
pub fn detect_jumps(values: &[f64]) -> (usize, f64) {
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut count = 0;
    let mut max_jump: f64 = 0.0;
    let mut window = Vec::with_capacity(2 * MEDIAN_WINDOW + 1);
    for (i, &d) in diffs.iter().enumerate() {
        if d <= JUMP_ABS_MIN {
            continue;
        }
        window.clear();
        let lo = i.saturating_sub(MEDIAN_WINDOW);
        let hi = (i + MEDIAN_WINDOW + 1).min(diffs.len());
        window.extend(diffs[lo..hi].iter().copied().filter(|v| *v > 0.0));
        let med = super::aggregate::median(&mut window);
        if d > JUMP_FACTOR * med {
            count += 1;
            max_jump = max_jump.max(d);
        }
    }
    (count, max_jump)
}

/// Surfaces of one seeded instance for each base-sample count.
pub fn saa_discontinuity_diagnostic(seed: u64, sample_counts: &[usize]) -> Result<Vec<SaaCurve>> {
    let bundle = saa_instance(seed)?;
    Ok(sample_counts
        .iter()
        .map(|&m| saa_surface(&bundle, m, derive_seed(seed, m as u64)))
        .collect())
}

/// Tidy CSV: `n_base_samples, x, value`.
pub fn write_saa_csv<W: Write>(out: W, curves: &[SaaCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_base_samples", "x", "value"])?;
    for c in curves {
        for (x, v) in c.xs.iter().zip(&c.values) {
            w.write_record([
                c.n_base_samples.to_string(),
                super::records::fmt_f64(*x),
                super::records::fmt_f64(*v),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
