//! CSV schema of experiment records.

use crate::bo_loop::IterationRecord;
use crate::error::{CboError, Result};
use std::io::{Read, Write};

/// Bumped whenever the column set or its meaning changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 11] = [
    "replication",
    "n",
    "x",
    "f",
    "g",
    "feasible",
    "recommendation",
    "score",
    "utility_gap",
    "acquisition_seconds",
    "flags",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub replication: usize,
    pub record: IterationRecord,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| CboError::Config(format!("bad number `{s}`: {e}")))
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(parse_f64).collect()
}

pub fn write_records<W: Write>(out: W, rows: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for row in rows {
        let r = &row.record;
        w.write_record([
            row.replication.to_string(),
            r.n.to_string(),
            fmt_vec(&r.point),
            fmt_f64(r.f),
            fmt_vec(&r.g),
            (r.feasible as u8).to_string(),
            r.recommendation.as_deref().map(fmt_vec).unwrap_or_default(),
            fmt_f64(r.score),
            r.utility_gap.map(fmt_f64).unwrap_or_default(),
            r.acquisition_seconds.map(fmt_f64).unwrap_or_default(),
            r.flags.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != COLUMNS {
        return Err(CboError::Config(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let opt = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                parse_f64(field(i)).map(Some)
            }
        };
        let parse_usize = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|e| CboError::Config(format!("bad integer `{}`: {e}", field(i))))
        };
        rows.push(ExperimentRecord {
            replication: parse_usize(0)?,
            record: IterationRecord {
                n: parse_usize(1)?,
                point: parse_vec(field(2))?,
                f: parse_f64(field(3))?,
                g: parse_vec(field(4))?,
                feasible: field(5) == "1",
                recommendation: if field(6).is_empty() {
                    None
                } else {
                    Some(parse_vec(field(6))?)
                },
                score: parse_f64(field(7))?,
                utility_gap: opt(8)?,
                acquisition_seconds: opt(9)?,
                flags: if field(10).is_empty() {
                    Vec::new()
                } else {
                    field(10).split(';').map(String::from).collect()
                },
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let rows = vec![ExperimentRecord {
            replication: 2,
            record: IterationRecord {
                n: 5,
                point: vec![0.1, 1.0 / 3.0],
                f: -1.234_567_890_123_456_7,
                g: vec![0.5, -2.0],
                feasible: false,
                recommendation: Some(vec![std::f64::consts::PI, 0.0]),
                score: 0.7,
                utility_gap: Some(1e-300),
                acquisition_seconds: None,
                flags: vec!["scoring_evaluation".into()],
            },
        }];
        let mut buf = Vec::new();
        write_records(&mut buf, &rows).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), rows);
    }
}
