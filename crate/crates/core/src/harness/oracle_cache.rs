//! Cached brute-force optima keyed by `(problem, resolution, polish, seed)`.

use crate::error::{CboError, Result};
use crate::problems::{self, constrained_optimum_oracle, domain_max_oracle, Problem};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleEntry {
    pub problem: String,
    pub resolution: usize,
    pub polish: usize,
    /// Recorded for provenance; the grid-and-polish oracle itself is deterministic.
    pub seed: u64,
    pub f_star: f64,
    pub x_star: Vec<f64>,
    pub domain_max: f64,
}

impl OracleEntry {
    pub fn key(&self) -> (&str, usize, usize, u64) {
        (&self.problem, self.resolution, self.polish, self.seed)
    }

    pub fn compute(problem: &Problem, resolution: usize, polish: usize, seed: u64) -> Result<Self> {
        let opt = constrained_optimum_oracle(problem, resolution, polish)?;
        let max = domain_max_oracle(problem, resolution, polish.min(20));
        Ok(OracleEntry {
            problem: problem.name.clone(),
            resolution,
            polish,
            seed,
            f_star: opt.value,
            x_star: opt.point,
            domain_max: max.value,
        })
    }

    /// The registered problem with this entry's optimum and domain maximum attached.
    pub fn attach(&self) -> Result<Problem> {
        Ok(problems::by_name(&self.problem)?
            .with_optimum(self.f_star)
            .with_domain_max(self.domain_max))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCache {
    #[serde(default)]
    pub entry: Vec<OracleEntry>,
}

impl OracleCache {
    /// Loads the cache, or an empty one when the file does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => toml::from_str(&text).map_err(|e| CboError::Config(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(OracleCache::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let text = toml::to_string(self).map_err(|e| CboError::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn get(&self, problem: &str, resolution: usize, polish: usize, seed: u64) -> Option<&OracleEntry> {
        self.entry.iter().find(|e| e.key() == (problem, resolution, polish, seed))
    }

    /// Inserts or replaces the entry with the same key.
    pub fn insert(&mut self, entry: OracleEntry) {
        self.entry.retain(|e| e.key() != entry.key());
        self.entry.push(entry);
        self.entry.sort_by(|a, b| {
            (a.problem.as_str(), a.resolution, a.polish, a.seed).cmp(&(b.problem.as_str(), b.resolution, b.polish, b.seed))
        });
    }
}
