//! The outer constrained BO loop: initialization, acquisition, recommendation and scoring.

use crate::acq::{self, AscentOptions};
use crate::bounds::Bounds;
use crate::error::{CboError, Result};
use crate::gp::{sq_dist, BundleParams, FitOptions, PosteriorBundle, MIN_SEPARATION};
use crate::normal::cdf;
use crate::problems::Problem;
use crate::qmc::{derive_seed, latin_hypercube, ScrambledSobol};
use crate::twostep::{self, TwoStepConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Maximum number of Latin-hypercube designs tried during initialization.
pub const MAX_INIT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Random,
    Eic,
    TwoStepC,
}

impl Policy {
    pub const NAMES: [&'static str; 3] = ["random", "eic", "two_step_c"];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Eic => "eic",
            Policy::TwoStepC => "two_step_c",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = CboError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Policy::Random),
            "eic" => Ok(Policy::Eic),
            "two_step_c" => Ok(Policy::TwoStepC),
            _ => Err(CboError::Unknown {
                kind: "policy",
                name: s.into(),
                registered: Policy::NAMES.join(", "),
            }),
        }
    }
}

/// What an infeasible or missing recommendation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Best feasible objective value observed so far.
    BestFeasibleFallback,
    /// Maximum of the objective over the whole domain.
    DomainMaxPenalty,
}

/// How the recommended point is searched for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendOptions {
    pub n_candidates: usize,
    /// Qualifying candidates (lowest posterior mean first) that get polished.
    pub n_polish: usize,
    pub polish_steps: usize,
    pub pf_threshold: f64,
}

impl Default for RecommendOptions {
    fn default() -> Self {
        RecommendOptions {
            n_candidates: 2048,
            n_polish: 32,
            polish_steps: 20,
            pf_threshold: 0.975,
        }
    }
}

/// Everything a replication needs besides the problem and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub budget: usize,
    pub batch_size: usize,
    pub n_init: usize,
    pub score_mode: ScoreMode,
    pub fit: FitOptions,
    pub two_step: TwoStepConfig,
    pub eic: AscentOptions,
    pub recommend: RecommendOptions,
    pub record_timing: bool,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            budget: 40,
            batch_size: 1,
            n_init: 3,
            score_mode: ScoreMode::BestFeasibleFallback,
            fit: FitOptions::default(),
            two_step: TwoStepConfig::default(),
            eic: AscentOptions::default(),
            recommend: RecommendOptions::default(),
            record_timing: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub point: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub feasible: bool,
}

impl Observation {
    pub fn new(point: Vec<f64>, (f, g): (f64, Vec<f64>)) -> Self {
        let feasible = g.iter().all(|v| *v <= 0.0);
        Observation { point, f, g, feasible }
    }
}

/// Fitted surrogate plus the evaluation history it was fitted to.
#[derive(Debug, Clone)]
pub struct BoState {
    pub bundle: PosteriorBundle,
    pub params: BundleParams,
    pub history: Vec<Observation>,
    pub iteration: usize,
    pub seed: u64,
    widths: Vec<f64>,
    fit: FitOptions,
}

impl BoState {
    /// Fits a fresh state to `history`.
    pub fn from_history(history: Vec<Observation>, bounds: &Bounds, fit: &FitOptions, seed: u64) -> Result<Self> {
        let widths = bounds.widths();
        let (bundle, params) = fit_bundle(&history, &widths, fit, seed, 0, None)?;
        Ok(BoState {
            bundle,
            params,
            history,
            iteration: 0,
            seed,
            widths,
            fit: fit.clone(),
        })
    }

    /// Appends evaluations and refits with the previous hyperparameters as a warm start.
    pub fn extend(&mut self, observations: Vec<Observation>) -> Result<()> {
        self.history.extend(observations);
        self.iteration += 1;
        let (bundle, params) = fit_bundle(
            &self.history,
            &self.widths,
            &self.fit,
            self.seed,
            self.iteration,
            Some(&self.params),
        )?;
        self.bundle = bundle;
        self.params = params;
        Ok(())
    }

    pub fn best_feasible_value(&self) -> Option<f64> {
        self.bundle.incumbent().map(|i| i.value)
    }
}

fn fit_bundle(
    history: &[Observation],
    widths: &[f64],
    fit: &FitOptions,
    seed: u64,
    iteration: usize,
    warm: Option<&BundleParams>,
) -> Result<(PosteriorBundle, BundleParams)> {
    let inputs: Vec<Vec<f64>> = history.iter().map(|o| o.point.clone()).collect();
    let f: Vec<f64> = history.iter().map(|o| o.f).collect();
    let m = history.first().map_or(0, |o| o.g.len());
    let g: Vec<Vec<f64>> = (0..m).map(|k| history.iter().map(|o| o.g[k]).collect()).collect();
    let opts = FitOptions {
        seed: derive_seed(fit.seed ^ seed, 1_000 + iteration as u64),
        ..fit.clone()
    };
    PosteriorBundle::fit(&inputs, &f, &g, widths, &opts, warm)
}

/// Evaluates Latin-hypercube designs until one contains a feasible point.
pub fn initialize(problem: &Problem, n_init: usize, fit: &FitOptions, seed: u64) -> Result<BoState> {
    if n_init == 0 {
        return Err(CboError::InvalidArgument("n_init must be at least 1".into()));
    }
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let design = latin_hypercube(n_init, &problem.bounds, &mut rng);
        let history: Vec<Observation> = design
            .into_iter()
            .map(|x| {
                let e = problem.evaluate(&x);
                Observation::new(x, e)
            })
            .collect();
        if history.iter().any(|o| o.feasible) {
            return BoState::from_history(history, &problem.bounds, fit, seed);
        }
    }
    Err(CboError::Initialization {
        problem: problem.name.clone(),
        attempts: MAX_INIT_ATTEMPTS,
    })
}

struct Candidate {
    x: Vec<f64>,
    mean: f64,
}

fn pf_all(bundle: &PosteriorBundle, x: &[f64], threshold: f64) -> bool {
    bundle.active_constraints().all(|c| {
        let p = c.posterior(x);
        acq::pf(p.mean, p.variance).unwrap_or(0.0) >= threshold
    })
}

/// Descends the posterior mean from `x` while every PF stays above the threshold.
/// A blocked step is retried along the tangent of the most binding constraint.
fn polish(bundle: &PosteriorBundle, bounds: &Bounds, start: &Candidate, opts: &RecommendOptions) -> Candidate {
    let widths = bounds.widths();
    let d = bounds.dim();
    let mut x = start.x.clone();
    let mut mean = start.mean;
    let mut step = 0.05;
    for _ in 0..opts.polish_steps {
        let pg = bundle.objective.posterior_grads(&x);
        let dir: Vec<f64> = (0..d).map(|l| -pg.dmean[l] * widths[l]).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let try_dir = |dir: &[f64], step: f64| -> Option<(Vec<f64>, f64)> {
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return None;
            }
            let mut y: Vec<f64> = (0..d).map(|l| x[l] + step * dir[l] / n * widths[l]).collect();
            bounds.project(&mut y);
            let m = bundle.objective.posterior(&y).mean;
            (m < mean && pf_all(bundle, &y, opts.pf_threshold)).then_some((y, m))
        };
        let mut moved = try_dir(&dir, step);
        if moved.is_none() {
            // slide along the boundary of the most binding constraint
            let binding = bundle
                .active_constraints()
                .map(|c| (c, c.posterior(&x)))
                .min_by(|a, b| {
                    let pa = cdf(-a.1.mean / a.1.sd().max(1e-300));
                    let pb = cdf(-b.1.mean / b.1.sd().max(1e-300));
                    pa.total_cmp(&pb)
                })
                .map(|(c, _)| c.posterior_grads(&x));
            if let Some(cg) = binding {
                // ascent direction of μᶜ − z·σᶜ, the quantity that must stay ≤ 0
                let z = crate::normal::quantile(opts.pf_threshold);
                let n: Vec<f64> = (0..d).map(|l| (cg.dmean[l] + z * cg.dsigma[l]) * widths[l]).collect();
                let nn = n.iter().map(|v| v * v).sum::<f64>();
                if nn > 0.0 {
                    let proj = dir.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() / nn;
                    let tangent: Vec<f64> = dir.iter().zip(&n).map(|(a, b)| a - proj * b).collect();
                    moved = try_dir(&tangent, step);
                }
            }
        }
        match moved {
            Some((y, m)) => {
                x = y;
                mean = m;
                step = (step * 1.5).min(0.25);
            }
            None => {
                step *= 0.25;
                if step < 1e-10 {
                    break;
                }
            }
        }
    }
    Candidate { x, mean }
}

/// Point of lowest posterior mean among candidates whose every PF is at least
/// the threshold; `None` when nothing qualifies.
pub fn recommend(state: &BoState, bounds: &Bounds, opts: &RecommendOptions) -> Option<Vec<f64>> {
    let bundle = &state.bundle;
    let mut points: Vec<Vec<f64>> = state.history.iter().map(|o| o.point.clone()).collect();
    let sobol = ScrambledSobol::new(bounds.dim(), derive_seed(state.seed, 2_000_000 + state.iteration as u64));
    points.extend(sobol.points_in(bounds, opts.n_candidates));
    let mut qualifying: Vec<Candidate> = points
        .into_iter()
        .filter(|x| pf_all(bundle, x, opts.pf_threshold))
        .map(|x| {
            let mean = bundle.objective.posterior(&x).mean;
            Candidate { x, mean }
        })
        .collect();
    qualifying.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let polished: Vec<Candidate> = qualifying
        .iter()
        .take(opts.n_polish)
        .map(|c| polish(bundle, bounds, c, opts))
        .collect();
    polished
        .into_iter()
        .chain(qualifying)
        .min_by(|a, b| a.mean.total_cmp(&b.mean))
        .map(|c| c.x)
}

/// Score of a recommendation and whether scoring needed an extra evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOutcome {
    pub value: f64,
    pub scoring_evaluation: bool,
    pub recommendation_feasible: bool,
}

/// `f**ₙ`: the true objective at a truly feasible recommendation, else the mode's fallback.
pub fn score(history: &[Observation], recommendation: Option<&[f64]>, problem: &Problem, mode: ScoreMode) -> ScoreOutcome {
    let fallback = || match mode {
        ScoreMode::BestFeasibleFallback => history
            .iter()
            .filter(|o| o.feasible)
            .map(|o| o.f)
            .reduce(f64::min)
            .or(problem.domain_max)
            .unwrap_or(f64::NAN),
        ScoreMode::DomainMaxPenalty => problem.domain_max.unwrap_or(f64::NAN),
    };
    let Some(x) = recommendation else {
        return ScoreOutcome {
            value: fallback(),
            scoring_evaluation: false,
            recommendation_feasible: false,
        };
    };
    let tol = MIN_SEPARATION * MIN_SEPARATION;
    let (f, feasible, scoring_evaluation) = match history.iter().find(|o| sq_dist(&o.point, x) < tol) {
        Some(o) => (o.f, o.feasible, false),
        None => {
            let o = Observation::new(x.to_vec(), problem.evaluate(x));
            (o.f, o.feasible, true)
        }
    };
    ScoreOutcome {
        value: if feasible { f } else { fallback() },
        scoring_evaluation,
        recommendation_feasible: feasible,
    }
}

/// `εₙ = |f**ₙ − f*|`.
pub fn utility_gap(score: f64, f_star: f64) -> f64 {
    (score - f_star).abs()
}

/// One row per evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Number of evaluations so far (1-based).
    pub n: usize,
    pub point: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub feasible: bool,
    pub recommendation: Option<Vec<f64>>,
    pub score: f64,
    pub utility_gap: Option<f64>,
    pub acquisition_seconds: Option<f64>,
    pub flags: Vec<String>,
}

/// Records of one replication; `failure` is set when it stopped early.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<IterationRecord>,
    pub failure: Option<String>,
}

fn warn_on_resampling(points: &[Vec<f64>], history: &[Observation]) {
    let tol = MIN_SEPARATION * MIN_SEPARATION;
    for (i, p) in points.iter().enumerate() {
        if history.iter().any(|o| sq_dist(&o.point, p) < tol) || points[..i].iter().any(|b| sq_dist(b, p) < tol) {
            log::warn!("acquisition proposed an already-sampled point");
        }
    }
}

/// Proposes the next batch under `policy`.
pub fn select_batch(
    state: &BoState,
    problem: &Problem,
    policy: Policy,
    q: usize,
    cfg: &LoopConfig,
    flags: &mut Vec<String>,
) -> Result<Vec<Vec<f64>>> {
    let bounds = &problem.bounds;
    let seed = derive_seed(state.seed, 3_000_000 + state.iteration as u64);
    let mut batch = match policy {
        Policy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..q)
                .map(|_| {
                    let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
                    bounds.from_unit(&u)
                })
                .collect()
        }
        _ if state.bundle.incumbent().is_none() => {
            flags.push("feasibility_search".into());
            let (x, _) = acq::maximize_pf(&state.bundle, bounds, &cfg.eic, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let mut batch = vec![x];
            while batch.len() < q {
                let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
                batch.push(bounds.from_unit(&u));
            }
            batch
        }
        Policy::Eic if q == 1 => vec![acq::maximize_eic(&state.bundle, bounds, &cfg.eic, seed)?.0],
        Policy::Eic => acq::greedy_batch_eic(&state.bundle, bounds, q, &cfg.eic, cfg.two_step.n_value_samples, seed)?,
        Policy::TwoStepC => {
            let result = twostep::optimize(&state.bundle, bounds, q, &cfg.two_step, seed)?;
            if result.fell_back {
                flags.push("two_step_fallback_eic".into());
            }
            result.batch.into_points()
        }
    };
    for x in &mut batch {
        bounds.project(x);
    }
    warn_on_resampling(&batch, &state.history);
    Ok(batch)
}

fn gap(problem: &Problem, value: f64) -> Option<f64> {
    problem.true_optimum.map(|f_star| utility_gap(value, f_star))
}

fn validate(cfg: &LoopConfig) -> Result<()> {
    if cfg.batch_size == 0 || cfg.budget < cfg.batch_size {
        return Err(CboError::InvalidArgument("need budget ≥ batch_size ≥ 1".into()));
    }
    if cfg.n_init == 0 || cfg.n_init > cfg.budget {
        return Err(CboError::InvalidArgument("need 1 ≤ n_init ≤ budget".into()));
    }
    cfg.two_step.validate()
}

/// Runs one replication. Initialization errors are returned; errors after
/// initialization end the replication with the records collected so far.
pub fn run(problem: &Problem, policy: Policy, cfg: &LoopConfig) -> Result<RunOutcome> {
    validate(cfg)?;
    let mut state = initialize(problem, cfg.n_init, &cfg.fit, cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.budget);

    // Initial design rows: scored against the prefix seen so far; the model
    // recommendation is only available once the whole design is in.
    for i in 0..cfg.n_init {
        let o = &state.history[i];
        let last = i + 1 == cfg.n_init;
        let rec = if last {
            recommend(&state, &problem.bounds, &cfg.recommend)
        } else {
            None
        };
        let s = score(&state.history[..=i], rec.as_deref(), problem, cfg.score_mode);
        let mut flags = vec!["initial_design".to_string()];
        if s.scoring_evaluation {
            flags.push("scoring_evaluation".into());
        }
        records.push(IterationRecord {
            n: i + 1,
            point: o.point.clone(),
            f: o.f,
            g: o.g.clone(),
            feasible: o.feasible,
            recommendation: rec,
            score: s.value,
            utility_gap: gap(problem, s.value),
            acquisition_seconds: None,
            flags,
        });
    }

    while state.history.len() < cfg.budget {
        let q = cfg.batch_size.min(cfg.budget - state.history.len());
        let mut flags = Vec::new();
        let started = Instant::now();
        let batch = match select_batch(&state, problem, policy, q, cfg, &mut flags) {
            Ok(b) => b,
            Err(e) => {
                return Ok(RunOutcome {
                    records,
                    failure: Some(format!("acquisition at n = {}: {e}", state.history.len() + 1)),
                })
            }
        };
        let seconds = cfg.record_timing.then(|| started.elapsed().as_secs_f64());
        let observations: Vec<Observation> = batch
            .into_iter()
            .map(|x| {
                let e = problem.evaluate(&x);
                Observation::new(x, e)
            })
            .collect();
        if let Err(e) = state.extend(observations.clone()) {
            return Ok(RunOutcome {
                records,
                failure: Some(format!("model fit at n = {}: {e}", state.history.len())),
            });
        }
        let rec = recommend(&state, &problem.bounds, &cfg.recommend);
        let s = score(&state.history, rec.as_deref(), problem, cfg.score_mode);
        if s.scoring_evaluation {
            flags.push("scoring_evaluation".into());
        }
        let n0 = state.history.len() - observations.len();
        for (k, o) in observations.into_iter().enumerate() {
            records.push(IterationRecord {
                n: n0 + k + 1,
                point: o.point,
                f: o.f,
                g: o.g,
                feasible: o.feasible,
                recommendation: rec.clone(),
                score: s.value,
                utility_gap: gap(problem, s.value),
                acquisition_seconds: seconds,
                flags: flags.clone(),
            });
        }
    }
    Ok(RunOutcome { records, failure: None })
}
