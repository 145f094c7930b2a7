//! Utility-gap curves with bootstrap confidence bands.

use super::records::{read_records, SCHEMA_VERSION};
use super::Manifest;
use crate::error::{CboError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Gaps below this are floored before taking log10.
pub const GAP_FLOOR: f64 = 1e-12;
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub problem: String,
    pub policy: String,
    pub n: usize,
    pub n_replications: usize,
    pub log10_median: f64,
    pub median_lo: f64,
    pub median_hi: f64,
    pub log10_mean: f64,
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub n_floored: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn log10_floored(v: f64) -> f64 {
    v.max(GAP_FLOOR).log10()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// log10 median and mean of `gaps` with 95% percentile-bootstrap bands.
pub fn summarize(gaps: &[f64], resamples: usize, seed: u64) -> [f64; 6] {
    let floored: Vec<f64> = gaps.iter().map(|g| g.max(GAP_FLOOR)).collect();
    let mut tmp = floored.clone();
    let med = log10_floored(median(&mut tmp));
    let mean = log10_floored(floored.iter().sum::<f64>() / floored.len() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meds = Vec::with_capacity(resamples);
    let mut means = Vec::with_capacity(resamples);
    let k = floored.len();
    for _ in 0..resamples {
        for t in tmp.iter_mut() {
            *t = floored[rng.random_range(0..k)];
        }
        means.push(log10_floored(tmp.iter().sum::<f64>() / k as f64));
        meds.push(log10_floored(median(&mut tmp)));
    }
    meds.sort_by(f64::total_cmp);
    means.sort_by(f64::total_cmp);
    [
        med,
        percentile(&meds, 0.025),
        percentile(&meds, 0.975),
        mean,
        percentile(&means, 0.025),
        percentile(&means, 0.975),
    ]
}

/// Summaries for every `(policy, n)` across the given results directories.
pub fn aggregate(dirs: &[&Path], seed: u64) -> Result<Vec<SummaryRow>> {
    if dirs.is_empty() {
        return Err(CboError::InvalidArgument("no results directories given".into()));
    }
    let mut optima: BTreeMap<String, (f64, usize, usize, u64)> = BTreeMap::new();
    // (problem, policy) → n → gaps
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for dir in dirs {
        let manifest = Manifest::load(&dir.join("manifest.toml"))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(CboError::Config(format!(
                "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
                dir.display(),
                manifest.schema_version
            )));
        }
        let o = &manifest.oracle;
        let prov = (o.f_star, o.resolution, o.polish, o.seed);
        if let Some(prev) = optima.get(&manifest.problem) {
            if *prev != prov {
                return Err(CboError::Config(format!(
                    "{}: optimum provenance for {} differs from another directory",
                    dir.display(),
                    manifest.problem
                )));
            }
        }
        optima.insert(manifest.problem.clone(), prov);
        let rows = read_records(std::fs::File::open(dir.join("records.csv"))?)?;
        let by_n = groups.entry((manifest.problem.clone(), manifest.policy.clone())).or_default();
        for row in rows {
            if let Some(g) = row.record.utility_gap {
                by_n.entry(row.record.n).or_default().push(g);
            }
        }
    }
    let mut out = Vec::new();
    for ((problem, policy), by_n) in groups {
        for (n, gaps) in by_n {
            let s = summarize(&gaps, BOOTSTRAP_RESAMPLES, crate::qmc::derive_seed(seed, n as u64));
            out.push(SummaryRow {
                problem: problem.clone(),
                policy: policy.clone(),
                n,
                n_replications: gaps.len(),
                log10_median: s[0],
                median_lo: s[1],
                median_hi: s[2],
                log10_mean: s[3],
                mean_lo: s[4],
                mean_hi: s[5],
                n_floored: gaps.iter().filter(|g| **g < GAP_FLOOR).count(),
            });
        }
    }
    Ok(out)
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "problem",
        "policy",
        "n",
        "n_replications",
        "log10_median_gap",
        "median_lo",
        "median_hi",
        "log10_mean_gap",
        "mean_lo",
        "mean_hi",
        "n_floored",
    ])?;
    for r in rows {
        w.write_record([
            r.problem.clone(),
            r.policy.clone(),
            r.n.to_string(),
            r.n_replications.to_string(),
            super::records::fmt_f64(r.log10_median),
            super::records::fmt_f64(r.median_lo),
            super::records::fmt_f64(r.median_hi),
            super::records::fmt_f64(r.log10_mean),
            super::records::fmt_f64(r.mean_lo),
            super::records::fmt_f64(r.mean_hi),
            r.n_floored.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
