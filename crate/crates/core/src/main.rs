use cbo::harness::{self, saa, selftest, OracleCache, OracleEntry, RunConfig};
use cbo::problems;
use cbo::{CboError, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cbo",
    version,
    about = "Two-step lookahead constrained Bayesian optimization experiments"
)]
struct Cli {
    /// Worker threads (overrides the CBO_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replication of an experiment config.
    Run {
        config: PathBuf,
        /// Overwrite existing results in the output directory.
        #[arg(long)]
        force: bool,
        /// Compute and cache the optimum if it is missing.
        #[arg(long)]
        recompute_oracle: bool,
    },
    /// Summarize results directories into one tidy CSV.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute a problem's constrained optimum and store it in the cache.
    Oracle {
        problem: String,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        polish: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "oracle_cache.toml")]
        cache: PathBuf,
    },
    /// Evaluate the sample-average surface on a seeded 1-d instance and count its jumps.
    DiagnoseSaa {
        /// Base-sample counts to evaluate.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 256])]
        samples: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the surface CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the quick invariant checks.
    Selftest,
}

fn oracle(problem: &str, resolution: Option<usize>, polish: Option<usize>, seed: u64, cache_path: &Path) -> Result<()> {
    let p = problems::by_name(problem)?;
    let settings = harness::OracleSettings {
        resolution,
        polish,
        seed,
    };
    let (r, pol, s) = settings.resolved(p.dim());
    let mut cache = OracleCache::load(cache_path)?;
    let entry = match cache.get(problem, r, pol, s) {
        Some(e) => e.clone(),
        None => {
            let e = OracleEntry::compute(&p, r, pol, s)?;
            cache.insert(e.clone());
            cache.save(cache_path)?;
            e
        }
    };
    let x: Vec<String> = entry.x_star.iter().map(|v| format!("{v:.10}")).collect();
    println!(
        "{}: f* = {:.16e} at [{}], domain max = {:.16e}",
        entry.problem,
        entry.f_star,
        x.join(", "),
        entry.domain_max
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    harness::configure_threads(cli.threads)?;
    match cli.command {
        Command::Run {
            config,
            force,
            recompute_oracle,
        } => {
            let cfg = RunConfig::load(&config)?;
            let entry = harness::resolve_oracle(&cfg, recompute_oracle)?;
            let outcome = harness::run_experiment(&cfg, &entry, force)?;
            println!(
                "wrote {} rows to {} ({} failed replications)",
                outcome.records.len(),
                outcome.output_dir.display(),
                outcome.failures.len()
            );
            Ok(true)
        }
        Command::Aggregate { dirs, out, seed } => {
            let refs: Vec<&Path> = dirs.iter().map(PathBuf::as_path).collect();
            let rows = harness::aggregate(&refs, seed)?;
            harness::write_summary(std::fs::File::create(&out)?, &rows)?;
            let floored: usize = rows.iter().map(|r| r.n_floored).sum();
            println!(
                "wrote {} summary rows to {} ({floored} gaps floored)",
                rows.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Oracle {
            problem,
            resolution,
            polish,
            seed,
            cache,
        } => {
            oracle(&problem, resolution, polish, seed, &cache)?;
            Ok(true)
        }
        Command::DiagnoseSaa { samples, seed, out } => {
            if samples.contains(&0) {
                return Err(CboError::InvalidArgument("sample counts must be at least 1".into()));
            }
            let curves = saa::saa_discontinuity_diagnostic(seed, &samples)?;
            for c in &curves {
                println!(
                    "M = {}: {} jumps, max jump {:.6e}",
                    c.n_base_samples, c.jump_count, c.max_jump
                );
            }
            if let Some(path) = out {
                saa::write_saa_csv(std::fs::File::create(path)?, &curves)?;
            }
            Ok(true)
        }
        Command::Selftest => {
            let checks = selftest::run_selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
