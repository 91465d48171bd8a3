//! Trial records, their CSV form and summary statistics.

use std::io::{Read, Write};

use super::run::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub algorithm: String,
    pub seed: u64,
    /// Sample complexity for successful trials, total pulls otherwise.
    pub pulls: u64,
    pub succeeded: bool,
    pub rounds: usize,
    pub wall_ms: f64,
    pub d_k: Vec<usize>,
}

pub const CSV_HEADER: [&str; 7] = ["algorithm", "seed", "pulls", "succeeded", "rounds", "wall_ms", "d_k"];

pub fn write_records<W: Write>(writer: W, records: &[TrialRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let d_k: Vec<String> = r.d_k.iter().map(|d| d.to_string()).collect();
        w.write_record([
            r.algorithm.clone(),
            r.seed.to_string(),
            r.pulls.to_string(),
            r.succeeded.to_string(),
            r.rounds.to_string(),
            r.wall_ms.to_string(),
            d_k.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Record {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |field: &str, value: &str| HarnessError::Record {
            line,
            message: format!("cannot parse {field} `{value}`"),
        };
        let field = |i: usize| row.get(i).unwrap_or("");
        macro_rules! parse {
            ($i:expr, $name:literal) => {
                field($i).parse().map_err(|_| bad($name, field($i)))?
            };
        }
        let d_k = if field(6).is_empty() {
            Vec::new()
        } else {
            field(6)
                .split(';')
                .map(|s| s.parse().map_err(|_| bad("d_k", s)))
                .collect::<Result<_, _>>()?
        };
        out.push(TrialRecord {
            algorithm: field(0).to_string(),
            seed: parse!(1, "seed"),
            pulls: parse!(2, "pulls"),
            succeeded: parse!(3, "succeeded"),
            rounds: parse!(4, "rounds"),
            wall_ms: parse!(5, "wall_ms"),
            d_k,
        });
    }
    Ok(out)
}

/// Pull statistics over successful trials.
#[derive(Debug, Clone, PartialEq)]
pub struct PullStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    /// `None` when no trial succeeded.
    pub pulls: Option<PullStats>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut pulls: Vec<f64> = records
        .iter()
        .filter(|r| r.succeeded)
        .map(|r| r.pulls as f64)
        .collect();
    pulls.sort_by(f64::total_cmp);
    let successes = pulls.len();
    let stats = (!pulls.is_empty()).then(|| PullStats {
        mean: pulls.iter().sum::<f64>() / successes as f64,
        median: quantile(&pulls, 0.5),
        q1: quantile(&pulls, 0.25),
        q3: quantile(&pulls, 0.75),
    });
    Summary {
        trials: records.len(),
        successes,
        failures: records.len() - successes,
        success_rate: if records.is_empty() {
            0.0
        } else {
            successes as f64 / records.len() as f64
        },
        pulls: stats,
    }
}
