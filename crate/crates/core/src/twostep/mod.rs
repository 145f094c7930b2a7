//! The two-step lookahead constrained acquisition (2-OPT-C).
//!
//! For a candidate batch `X₁` the acquisition is
//! `E₀[max_{x₂} α(X₁, x₂, Y)]` with `Y` the fantasized batch values. Its
//! gradient is estimated with the likelihood-ratio method: for each fantasy,
//! `Γ = α(X₁, x₂*, Y) ∇ log p(Y; X₁) + ∇_{X₁} α(X₁, x₂*, Y)` with `x₂*` held fixed.

mod config;
mod density;
mod stage;

pub use config::TwoStepConfig;
pub use density::{stage_one_incumbent, FantasyDistribution, FantasySample};
pub use stage::StageOne;

use crate::acq::{self, AscentOptions, McEstimate};
use crate::bounds::Bounds;
use crate::error::{CboError, Result};
use crate::gp::{sq_dist, PosteriorBundle, MIN_SEPARATION};
use crate::qmc::{derive_seed, latin_hypercube, ScrambledSobol};
use crate::search::multistart_maximize;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// `q` points in the box, the decision variable of the acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBatch {
    points: Vec<Vec<f64>>,
}

impl CandidateBatch {
    /// Validates containment and pairwise separation.
    pub fn new(points: Vec<Vec<f64>>, bounds: &Bounds) -> Result<Self> {
        if points.is_empty() {
            return Err(CboError::InvalidArgument("empty batch".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != bounds.dim() {
                return Err(CboError::DimensionMismatch {
                    expected: bounds.dim(),
                    got: p.len(),
                });
            }
            if !bounds.contains(p) {
                return Err(CboError::InvalidArgument(format!("batch point {i} outside the domain")));
            }
            if points[..i].iter().any(|o| sq_dist(o, p) < MIN_SEPARATION * MIN_SEPARATION) {
                return Err(CboError::InvalidArgument(format!(
                    "batch point {i} duplicates an earlier point"
                )));
            }
        }
        Ok(CandidateBatch { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn q(&self) -> usize {
        self.points.len()
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }
}

fn incumbent_value(bundle: &PosteriorBundle) -> Result<f64> {
    bundle.incumbent().map(|i| i.value).ok_or(CboError::MissingIncumbent)
}

/// `log p(y; X₁)` and its score `∇_{X₁} log p` (`q × d`).
pub fn fantasy_log_density_and_score(
    bundle: &PosteriorBundle,
    x1: &[Vec<f64>],
    y_f: &[f64],
    y_g: &[Vec<f64>],
) -> Result<(f64, DMatrix<f64>)> {
    let dist = FantasyDistribution::with_grads(bundle, x1)?;
    Ok((dist.log_density(y_f, y_g), dist.score(y_f, y_g)))
}

/// `count` QMC fantasies at `X₁`, deterministic in `seed`.
pub fn sample_fantasies(bundle: &PosteriorBundle, x1: &[Vec<f64>], count: usize, seed: u64) -> Result<Vec<FantasySample>> {
    let f0 = incumbent_value(bundle)?;
    let dist = FantasyDistribution::new(bundle, x1)?;
    let sobol = ScrambledSobol::new(dist.dims(), seed);
    Ok((0..count as u32).map(|i| dist.qmc_sample(&sobol, i, f0)).collect())
}

/// `α(X₁, x₂, y)` for one fantasy.
pub fn alpha(bundle: &PosteriorBundle, x1: &[Vec<f64>], x2: &[f64], sample: &FantasySample) -> Result<f64> {
    let f0 = incumbent_value(bundle)?;
    Ok(StageOne::new(bundle, x1, sample, f0)?.alpha(x2))
}

/// Result of the inner maximization over `x₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x2: Vec<f64>,
    pub value: f64,
    /// Set when every candidate was excluded.
    pub degenerate: bool,
}

/// Reusable screening design for inner solves.
#[derive(Debug, Clone)]
pub struct InnerSearch {
    screen: Vec<Vec<f64>>,
    restarts: usize,
    steps: usize,
    delta: f64,
}

impl InnerSearch {
    pub fn new(bounds: &Bounds, config: &TwoStepConfig, seed: u64) -> Self {
        InnerSearch {
            screen: ScrambledSobol::new(bounds.dim(), seed).points_in(bounds, config.inner_screen),
            restarts: config.inner_restarts,
            steps: config.inner_steps,
            delta: config.delta,
        }
    }

    /// Maximizes `α(X₁, ·, y)` from the screened design, plus a warm start
    /// at `previous` when given.
    pub fn maximize(&self, stage: &StageOne, bounds: &Bounds, previous: Option<&[f64]>) -> InnerSolution {
        let delta = self.delta;
        let f = |x: &[f64]| {
            if stage.excluded(x, delta) {
                return None;
            }
            let (v, g, _) = stage.alpha_grad_x2(x);
            Some((v, g))
        };
        let mut best = multistart_maximize(bounds, &self.screen, self.restarts, self.steps, f);
        if let Some(prev) = previous {
            if let Some((x, v)) = multistart_maximize(bounds, &[prev.to_vec()], 1, self.steps, f) {
                if best.as_ref().is_none_or(|(_, b)| v > *b) {
                    best = Some((x, v));
                }
            }
        }
        match best {
            Some((x2, value)) => InnerSolution {
                x2,
                value,
                degenerate: false,
            },
            None => InnerSolution {
                x2: self.screen[0].clone(),
                value: stage.realized_improvement(),
                degenerate: true,
            },
        }
    }
}

/// Solves `max_{x₂} α(X₁, x₂, y)` for one fantasy sample.
pub fn inner_maximize(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    x1: &[Vec<f64>],
    sample: &FantasySample,
    config: &TwoStepConfig,
    seed: u64,
) -> Result<InnerSolution> {
    let f0 = incumbent_value(bundle)?;
    let stage = StageOne::new(bundle, x1, sample, f0)?;
    Ok(InnerSearch::new(bounds, config, seed).maximize(&stage, bounds, None))
}

/// One likelihood-ratio gradient draw.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub grad: DMatrix<f64>,
    pub alpha: f64,
    /// Set when `∇_{X₁} α` was zeroed because `x₂*` was too close to data.
    pub degenerate: bool,
}

fn gradient_from_parts(dist: &FantasyDistribution, stage: &StageOne, sample: &FantasySample, x2: &[f64]) -> GradientSample {
    let (alpha, direct, degenerate) = stage.alpha_grad_batch(x2);
    let score = dist.score(&sample.y_f, &sample.y_g);
    GradientSample {
        grad: score * alpha + direct,
        alpha,
        degenerate,
    }
}

/// `Γ = α(X₁, x₂*, y) ∇ log p(y; X₁) + ∇_{X₁} α(X₁, x₂*, y)`.
pub fn lr_gradient_sample(
    bundle: &PosteriorBundle,
    x1: &[Vec<f64>],
    sample: &FantasySample,
    x2_star: &[f64],
) -> Result<GradientSample> {
    let f0 = incumbent_value(bundle)?;
    let dist = FantasyDistribution::with_grads(bundle, x1)?;
    let stage = StageOne::new(bundle, x1, sample, f0)?;
    Ok(gradient_from_parts(&dist, &stage, sample, x2_star))
}

/// QMC estimate of `E₀[max_{x₂} α(X₁, x₂, Y)]`.
pub fn estimate_value(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    x1: &[Vec<f64>],
    config: &TwoStepConfig,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let search = InnerSearch::new(bounds, config, derive_seed(seed, 1));
    estimate_value_with(bundle, bounds, x1, &search, n_samples, derive_seed(seed, 0))
}

fn estimate_value_with(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    x1: &[Vec<f64>],
    search: &InnerSearch,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let f0 = incumbent_value(bundle)?;
    let dist = FantasyDistribution::new(bundle, x1)?;
    let sobol = ScrambledSobol::new(dist.dims(), seed);
    let values = (0..n_samples as u32)
        .into_par_iter()
        .map(|i| {
            let sample = dist.qmc_sample(&sobol, i, f0);
            let stage = StageOne::new(bundle, x1, &sample, f0)?;
            Ok(search.maximize(&stage, bounds, None).value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_values(&values))
}

/// Outcome of [`optimize`].
#[derive(Debug, Clone)]
pub struct TwoStepResult {
    pub batch: CandidateBatch,
    pub value: McEstimate,
    /// Set when every restart was degenerate and the batch came from EIC instead.
    pub fell_back: bool,
}

struct RestartTrace {
    initial: Vec<Vec<f64>>,
    last: Vec<Vec<f64>>,
    all_degenerate: bool,
}

/// Mean of the likelihood-ratio gradient over one QMC block, with the inner
/// problem re-solved every `inner_solve_period` samples.
#[allow(clippy::too_many_arguments)]
fn averaged_gradient(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    x1: &[Vec<f64>],
    config: &TwoStepConfig,
    search: &InnerSearch,
    x2_prev: &mut Option<Vec<f64>>,
    seed: u64,
    f0: f64,
) -> Result<(DMatrix<f64>, bool)> {
    let dist = FantasyDistribution::with_grads(bundle, x1)?;
    let sobol = ScrambledSobol::new(dist.dims(), seed);
    let mut sum = DMatrix::zeros(x1.len(), bounds.dim());
    let mut all_degenerate = true;
    for m in 0..config.n_grad_samples {
        let sample = dist.qmc_sample(&sobol, m as u32, f0);
        let stage = StageOne::new(bundle, x1, &sample, f0)?;
        let x2 = match x2_prev {
            Some(prev) if m % config.inner_solve_period != 0 => prev.clone(),
            _ => {
                let sol = search.maximize(&stage, bounds, x2_prev.as_deref());
                *x2_prev = Some(sol.x2.clone());
                sol.x2
            }
        };
        let g = gradient_from_parts(&dist, &stage, &sample, &x2);
        all_degenerate &= g.degenerate;
        sum += g.grad;
    }
    Ok((sum / config.n_grad_samples as f64, all_degenerate))
}

/// Moves batch points apart that collapsed onto each other after projection.
fn separate(points: &mut [Vec<f64>], bounds: &Bounds) {
    let widths = bounds.widths();
    for i in 1..points.len() {
        while points[..i]
            .iter()
            .any(|o| sq_dist(o, &points[i]) < MIN_SEPARATION * MIN_SEPARATION)
        {
            for (j, v) in points[i].iter_mut().enumerate() {
                let shift = 1e-6 * widths[j];
                *v = if *v + shift <= bounds.upper()[j] {
                    *v + shift
                } else {
                    *v - shift
                };
            }
        }
    }
}

fn run_restart(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    start: Vec<Vec<f64>>,
    config: &TwoStepConfig,
    search: &InnerSearch,
    seed: u64,
    f0: f64,
) -> Result<RestartTrace> {
    let widths = bounds.widths();
    let mut x1 = start.clone();
    let mut x2_prev: Option<Vec<f64>> = None;
    let (q, d) = (x1.len(), bounds.dim());
    // running second moment for per-coordinate normalization
    let mut second = DMatrix::<f64>::zeros(q, d);
    let beta: f64 = 0.9;
    let mut all_degenerate = true;
    for t in 0..config.n_sga_steps {
        let (g, deg) = averaged_gradient(
            bundle,
            bounds,
            &x1,
            config,
            search,
            &mut x2_prev,
            derive_seed(seed, t as u64),
            f0,
        )?;
        all_degenerate &= deg;
        let correction = 1.0 - beta.powi(t as i32 + 1);
        let step = config.step_size(t);
        for j in 0..q {
            for l in 0..d {
                second[(j, l)] = beta * second[(j, l)] + (1.0 - beta) * g[(j, l)] * g[(j, l)];
                let rms = (second[(j, l)] / correction).sqrt();
                if rms > 0.0 {
                    x1[j][l] += step * widths[l] * g[(j, l)] / rms;
                }
            }
            bounds.project(&mut x1[j]);
        }
        separate(&mut x1, bounds);
    }
    Ok(RestartTrace {
        initial: start,
        last: x1,
        all_degenerate,
    })
}

/// Restart starts: the best `n_restarts` of a Latin-hypercube set of batches
/// (plus the myopic maximizer when enabled), ranked by a small-sample value
/// estimate with common random numbers.
fn restart_starts(
    bundle: &PosteriorBundle,
    bounds: &Bounds,
    q: usize,
    config: &TwoStepConfig,
    search: &InnerSearch,
    base: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n_lhs = config.n_start_candidates.max(config.n_restarts);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, 0));
    let design = latin_hypercube(n_lhs * q, bounds, &mut rng);
    let mut candidates: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_lhs + 1);
    if config.myopic_start {
        let opts = AscentOptions::default();
        let myopic = if q == 1 {
            vec![acq::maximize_eic(bundle, bounds, &opts, derive_seed(base, 5))?.0]
        } else {
            acq::greedy_batch_eic(bundle, bounds, q, &opts, config.n_start_samples.max(64), derive_seed(base, 5))?
        };
        candidates.push(myopic);
    }
    candidates.extend(design.chunks(q).map(|c| c.to_vec()));
    for c in &mut candidates {
        separate(c, bounds);
    }
    if candidates.len() <= config.n_restarts {
        return Ok(candidates);
    }
    let seed = derive_seed(base, 6);
    let values = candidates
        .iter()
        .map(|c| Ok(estimate_value_with(bundle, bounds, c, search, config.n_start_samples, seed)?.estimate))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(config.n_restarts);
    order.sort_unstable();
    Ok(order.into_iter().map(|i| std::mem::take(&mut candidates[i])).collect())
}

/// Multistart stochastic gradient ascent of 2-OPT-C over `q`-point batches.
pub fn optimize(bundle: &PosteriorBundle, bounds: &Bounds, q: usize, config: &TwoStepConfig, seed: u64) -> Result<TwoStepResult> {
    config.validate()?;
    if q == 0 {
        return Err(CboError::InvalidArgument("batch size must be at least 1".into()));
    }
    let f0 = incumbent_value(bundle)?;
    let base = derive_seed(config.qmc_scramble_seed, seed);
    let search = InnerSearch::new(bounds, config, derive_seed(base, 3));

    let starts = restart_starts(bundle, bounds, q, config, &search, base)?;
    let restart_seed = derive_seed(base, 1);
    let traces = starts
        .into_par_iter()
        .enumerate()
        .map(|(r, start)| {
            run_restart(
                bundle,
                bounds,
                start,
                config,
                &search,
                derive_seed(restart_seed, r as u64),
                f0,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    if traces.iter().all(|t| t.all_degenerate) {
        log::warn!("all 2-OPT-C restarts degenerate; falling back to EIC");
        let opts = AscentOptions::default();
        let points = if q == 1 {
            vec![acq::maximize_eic(bundle, bounds, &opts, base)?.0]
        } else {
            acq::greedy_batch_eic(bundle, bounds, q, &opts, config.n_value_samples, base)?
        };
        let value = estimate_value_with(bundle, bounds, &points, &search, config.n_value_samples, derive_seed(base, 2))?;
        return Ok(TwoStepResult {
            batch: CandidateBatch::new(points, bounds)?,
            value,
            fell_back: true,
        });
    }

    // Screen every restart's start and end with common random numbers, then
    // pick between the two best with a larger sample.
    let screen_seed = derive_seed(base, 2);
    let mut candidates: Vec<(Vec<Vec<f64>>, f64)> = Vec::with_capacity(2 * traces.len());
    for t in traces {
        for x in [t.initial, t.last] {
            let v = estimate_value_with(bundle, bounds, &x, &search, config.n_value_samples, screen_seed)?;
            candidates.push((x, v.estimate));
        }
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].1.total_cmp(&candidates[a].1).then(a.cmp(&b)));
    let final_seed = derive_seed(base, 4);
    let mut best: Option<(usize, McEstimate)> = None;
    for &i in order.iter().take(2) {
        let v = estimate_value_with(
            bundle,
            bounds,
            &candidates[i].0,
            &search,
            config.n_final_value_samples,
            final_seed,
        )?;
        if best.as_ref().is_none_or(|(_, b)| v.estimate > b.estimate) {
            best = Some((i, v));
        }
    }
    let (i, value) = best.expect("at least one restart");
    Ok(TwoStepResult {
        batch: CandidateBatch::new(candidates.swap_remove(i).0, bounds)?,
        value,
        fell_back: false,
    })
}
