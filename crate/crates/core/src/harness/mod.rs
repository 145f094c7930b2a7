//! Experiment orchestration: configs, replications, persistence and aggregation.

pub mod aggregate;
pub mod config;
pub mod oracle_cache;
pub mod records;
pub mod saa;
pub mod selftest;

pub use aggregate::{aggregate, write_summary, SummaryRow};
pub use config::{OracleSettings, RunConfig};
pub use oracle_cache::{OracleCache, OracleEntry};
pub use records::{read_records, write_records, ExperimentRecord, SCHEMA_VERSION};

use crate::bo_loop;
use crate::error::{CboError, Result};
use crate::problems;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable overriding the worker count (the CLI flag wins).
pub const THREADS_ENV: &str = "CBO_THREADS";

/// Written beside every results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub problem: String,
    pub policy: String,
    pub n_replications: usize,
    pub n_failed: usize,
    #[serde(default)]
    pub failures: Vec<String>,
    pub oracle: OracleEntry,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CboError::Config(format!("{}: {e}", path.display())))
    }
}

/// Looks up the oracle entry for `cfg`, computing and caching it only when
/// `recompute` is set.
pub fn resolve_oracle(cfg: &RunConfig, recompute: bool) -> Result<OracleEntry> {
    let problem = problems::by_name(&cfg.problem)?;
    let (resolution, polish, seed) = cfg.oracle.resolved(problem.dim());
    let mut cache = OracleCache::load(&cfg.oracle_cache)?;
    if let Some(e) = cache.get(&cfg.problem, resolution, polish, seed) {
        return Ok(e.clone());
    }
    if !recompute {
        return Err(CboError::Config(format!(
            "no cached optimum for {} (resolution {resolution}, polish {polish}, seed {seed}) in {}; run `cbo oracle {}` first or pass --recompute-oracle",
            cfg.problem,
            cfg.oracle_cache.display(),
            cfg.problem
        )));
    }
    let entry = OracleEntry::compute(&problem, resolution, polish, seed)?;
    cache.insert(entry.clone());
    cache.save(&cfg.oracle_cache)?;
    Ok(entry)
}

/// Summary of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<String>,
}

/// Runs every replication of `cfg` and writes `records.csv`, `config.toml`
/// and `manifest.toml` into the output directory.
pub fn run_experiment(cfg: &RunConfig, oracle: &OracleEntry, force: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if oracle.problem != cfg.problem {
        return Err(CboError::Config(format!(
            "oracle entry is for {}, not {}",
            oracle.problem, cfg.problem
        )));
    }
    let dir = &cfg.output_dir;
    if dir.join("records.csv").exists() && !force {
        return Err(CboError::Config(format!(
            "{} already holds results; pass --force to overwrite",
            dir.display()
        )));
    }
    let problem = oracle.attach()?;
    let outcomes: Vec<(usize, Result<bo_loop::RunOutcome>)> = (0..cfg.n_replications)
        .into_par_iter()
        .map(|r| (r, bo_loop::run(&problem, cfg.policy, &cfg.loop_config(r))))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                if let Some(f) = o.failure {
                    failures.push(format!("replication {r}: {f}"));
                }
                records.extend(
                    o.records
                        .into_iter()
                        .map(|record| ExperimentRecord { replication: r, record }),
                );
            }
            Err(e) => failures.push(format!("replication {r}: {e}")),
        }
    }
    records.sort_by_key(|row| (row.replication, row.record.n));
    for f in &failures {
        log::warn!("{f}");
    }

    std::fs::create_dir_all(dir)?;
    let mut csv_bytes = Vec::new();
    write_records(&mut csv_bytes, &records)?;
    std::fs::write(dir.join("records.csv"), csv_bytes)?;
    // absolute paths, so the saved copy loads the same from inside `dir`
    let mut saved = cfg.clone();
    saved.output_dir = std::path::absolute(&cfg.output_dir)?;
    saved.oracle_cache = std::path::absolute(&cfg.oracle_cache)?;
    std::fs::write(dir.join("config.toml"), saved.to_toml()?)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        problem: cfg.problem.clone(),
        policy: cfg.policy.name().into(),
        n_replications: cfg.n_replications,
        n_failed: failures.len(),
        failures: failures.clone(),
        oracle: oracle.clone(),
    };
    std::fs::write(
        dir.join("manifest.toml"),
        toml::to_string(&manifest).map_err(|e| CboError::Config(e.to_string()))?,
    )?;
    Ok(ExperimentOutcome {
        output_dir: dir.clone(),
        records,
        failures,
    })
}

/// Worker count from the flag, else the environment, else rayon's default.
pub fn configure_threads(flag: Option<usize>) -> Result<()> {
    let from_env = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CboError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
