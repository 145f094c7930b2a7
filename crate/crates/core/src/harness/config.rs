use crate::acq::AscentOptions;
use crate::bo_loop::{LoopConfig, Policy, RecommendOptions, ScoreMode};
use crate::error::{CboError, Result};
use crate::gp::FitOptions;
use crate::problems;
use crate::qmc::derive_seed;
use crate::twostep::TwoStepConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Grid settings for the brute-force optimum; `None` picks a per-problem default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub resolution: Option<usize>,
    pub polish: Option<usize>,
    pub seed: u64,
}

impl OracleSettings {
    /// `(resolution, polish, seed)` with defaults filled in for a `dim`-dimensional problem.
    pub fn resolved(&self, dim: usize) -> (usize, usize, u64) {
        let (r, p) = if dim <= 2 { (2000, 50) } else { (60, 200) };
        (self.resolution.unwrap_or(r), self.polish.unwrap_or(p), self.seed)
    }
}

/// One experiment: a policy on a problem over several replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub policy: Policy,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub n_replications: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_score_mode")]
    pub score_mode: ScoreMode,
    #[serde(default)]
    pub base_seed: u64,
    /// Per-replication seed offsets; replication `i` uses offset `i` when empty.
    #[serde(default)]
    pub seed_offsets: Vec<u64>,
    pub output_dir: PathBuf,
    /// Wall-clock timing makes output bytes run-dependent, so it is opt-in.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_cache")]
    pub oracle_cache: PathBuf,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub eic: AscentOptions,
    #[serde(default)]
    pub recommend: RecommendOptions,
    #[serde(default)]
    pub two_step: TwoStepConfig,
}

fn default_budget() -> usize {
    40
}

fn one() -> usize {
    1
}

fn default_n_init() -> usize {
    3
}

fn default_score_mode() -> ScoreMode {
    ScoreMode::BestFeasibleFallback
}

fn default_cache() -> PathBuf {
    PathBuf::from("oracle_cache.toml")
}

impl RunConfig {
    pub fn new(problem: &str, policy: Policy, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            problem: problem.into(),
            policy,
            budget: default_budget(),
            batch_size: 1,
            n_replications: 1,
            n_init: default_n_init(),
            score_mode: default_score_mode(),
            base_seed: 0,
            seed_offsets: Vec::new(),
            output_dir: output_dir.into(),
            record_timing: false,
            oracle_cache: default_cache(),
            oracle: OracleSettings::default(),
            fit: FitOptions::default(),
            eic: AscentOptions::default(),
            recommend: RecommendOptions::default(),
            two_step: TwoStepConfig::default(),
        }
    }

    /// Reads a config; relative paths inside are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CboError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.output_dir, &mut cfg.oracle_cache] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CboError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        problems::by_name(&self.problem)?;
        for (name, v) in [
            ("budget", self.budget),
            ("batch_size", self.batch_size),
            ("n_replications", self.n_replications),
            ("n_init", self.n_init),
        ] {
            if v == 0 {
                return Err(CboError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.batch_size > self.budget || self.n_init > self.budget {
            return Err(CboError::Config("batch_size and n_init may not exceed budget".into()));
        }
        if !self.seed_offsets.is_empty() && self.seed_offsets.len() != self.n_replications {
            return Err(CboError::Config(format!(
                "{} seed offsets for {} replications",
                self.seed_offsets.len(),
                self.n_replications
            )));
        }
        if self.policy == Policy::TwoStepC {
            self.two_step.validate()?;
        }
        Ok(())
    }

    pub fn replication_seed(&self, replication: usize) -> u64 {
        let offset = self.seed_offsets.get(replication).copied().unwrap_or(replication as u64);
        derive_seed(self.base_seed, offset)
    }

    pub fn loop_config(&self, replication: usize) -> LoopConfig {
        LoopConfig {
            budget: self.budget,
            batch_size: self.batch_size,
            n_init: self.n_init,
            score_mode: self.score_mode,
            fit: self.fit.clone(),
            two_step: self.two_step.clone(),
            eic: self.eic,
            recommend: self.recommend.clone(),
            record_timing: self.record_timing,
            seed: self.replication_seed(replication),
        }
    }
}
