//! Result tables: per-run CSV, per-cell summary CSV/JSON, round reports.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::experiment::{Method, Metrics, RoundReport};

/// Column order of the per-run results table.
pub const RESULT_COLUMNS: [&str; 14] = [
    "scenario_id",
    "method",
    "n_robots",
    "n_targets",
    "seed",
    "sensing_accuracy",
    "path_efficiency",
    "response_time_s",
    "censored",
    "energy_total_j",
    "collisions",
    "bytes_transmitted",
    "rounds",
    "wall_ms",
];

const SUMMARY_COLUMNS: [&str; 17] = [
    "method",
    "n_robots",
    "runs",
    "failed",
    "censored",
    "sensing_accuracy_mean",
    "sensing_accuracy_std",
    "path_efficiency_mean",
    "path_efficiency_std",
    "response_time_s_mean",
    "response_time_s_std",
    "energy_total_j_mean",
    "energy_total_j_std",
    "collisions_mean",
    "collisions_std",
    "bytes_transmitted_mean",
    "bytes_transmitted_std",
];

/// One run; `metrics` is `None` when the run failed.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario_id: String,
    pub method: Method,
    pub n_robots: usize,
    pub n_targets: usize,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub rounds: usize,
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.scenario_id.clone(),
            self.method.to_string(),
            self.n_robots.to_string(),
            self.n_targets.to_string(),
            self.seed.to_string(),
        ];
        match &self.metrics {
            Some(m) => r.extend([
                m.sensing_accuracy.to_string(),
                m.path_efficiency.to_string(),
                m.response_time.to_string(),
                m.censored().to_string(),
                m.energy_total.to_string(),
                m.collisions.to_string(),
                m.bytes_transmitted.to_string(),
            ]),
            None => {
                r.extend(std::iter::repeat_n(String::new(), 3));
                r.push("failed".into());
                r.extend(std::iter::repeat_n(String::new(), 3));
            }
        }
        r.push(self.rounds.to_string());
        r.push(self.wall_ms.to_string());
        r
    }
}

pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

/// Means and deviations over the successful seeds of one (method, robot
/// count) cell. Censored response times count as the horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: Method,
    pub n_robots: usize,
    pub runs: usize,
    pub failed: usize,
    pub censored: usize,
    pub sensing_accuracy: Stat,
    pub path_efficiency: Stat,
    pub response_time_s: Stat,
    pub energy_total_j: Stat,
    pub collisions: Stat,
    pub bytes_transmitted: Stat,
}

pub fn write_summary_csv<W: Write>(out: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for c in cells {
        let mut r = vec![
            c.method.to_string(),
            c.n_robots.to_string(),
            c.runs.to_string(),
            c.failed.to_string(),
            c.censored.to_string(),
        ];
        for s in [
            c.sensing_accuracy,
            c.path_efficiency,
            c.response_time_s,
            c.energy_total_j,
            c.collisions,
            c.bytes_transmitted,
        ] {
            r.push(s.mean.to_string());
            r.push(s.std.to_string());
        }
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json<W: Write>(mut out: W, cells: &[CellSummary]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, cells).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// One JSON object per line.
pub fn write_round_reports<W: Write>(mut out: W, reports: &[RoundReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
