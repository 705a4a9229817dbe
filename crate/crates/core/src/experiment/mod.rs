//! Method pipelines, sweeps and result files.

mod metrics;
mod output;
mod runner;
mod sweep;

pub use metrics::{path_efficiency, response_time, sensing_accuracy, Metrics};
pub use output::{
    write_results_csv, write_round_reports, write_summary_csv, write_summary_json, CellSummary, ResultRow, Stat,
    RESULT_COLUMNS,
};
pub use runner::{run_method, Policy, RoundReport, RunOptions, RunOutput};
pub use sweep::{scenario_id, summarize, sweep, SweepSpec};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SgdConfig;
use crate::splitting::PruneSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LSAI")]
    Lsai,
    Centralized,
    Distributed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lsai, Method::Centralized, Method::Distributed];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lsai => "LSAI",
            Method::Centralized => "Centralized",
            Method::Distributed => "Distributed",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsai" => Ok(Method::Lsai),
            "centralized" | "central" => Ok(Method::Centralized),
            "distributed" => Ok(Method::Distributed),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected LSAI, Centralized or Distributed)"))),
        }
    }
}

/// Edge-side participant selection and attention aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub temperature: f64,
    /// Robots farther than this from the edge node are not selected.
    pub selection_radius: f64,
    pub min_history: f64,
    /// Fraction of selected robots that upload, best history first.
    pub participants_fraction: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { temperature: 0.5, selection_radius: f64::INFINITY, min_history: -1.0, participants_fraction: 1.0 }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("aggregation.temperature", "must be > 0"));
        }
        if !(self.selection_radius > 0.0) {
            return Err(Error::config("aggregation.selection_radius", "must be > 0"));
        }
        if !(-1.0..=1.0).contains(&self.min_history) {
            return Err(Error::config("aggregation.min_history", "must be in [-1, 1]"));
        }
        if !(self.participants_fraction > 0.0 && self.participants_fraction <= 1.0) {
            return Err(Error::config("aggregation.participants_fraction", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Sub-model extraction from the large model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplittingConfig {
    pub final_sparsity: f64,
    /// Masking steps in the sparsity ramp.
    pub ramp_steps: usize,
    pub fine_tune_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Recent observations per robot used as distillation inputs.
    pub window: usize,
}

impl Default for SplittingConfig {
    fn default() -> Self {
        Self {
            final_sparsity: 0.5,
            ramp_steps: 2,
            fine_tune_steps: 20,
            learning_rate: 0.05,
            batch_size: 32,
            window: 128,
        }
    }
}

impl SplittingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.final_sparsity) {
            return Err(Error::config("splitting.final_sparsity", "must be in [0, 1)"));
        }
        if self.ramp_steps == 0 {
            return Err(Error::config("splitting.ramp_steps", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("splitting.learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("splitting.batch_size", "must be >= 1"));
        }
        if self.window == 0 {
            return Err(Error::config("splitting.window", "must be >= 1"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> PruneSchedule {
        PruneSchedule {
            rounds: self.ramp_steps,
            final_sparsity: self.final_sparsity,
            fine_tune_steps: self.fine_tune_steps,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.learning_rate, batch_size: self.batch_size }
    }
}

/// Episode timeline and sweep grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Simulated seconds per run.
    pub horizon_s: f64,
    pub dt: f64,
    pub round_interval_s: f64,
    /// Communication rounds per run; round k starts at k * round_interval_s.
    pub rounds: usize,
    /// Ticks between local DDPG updates.
    pub update_every: usize,
    /// Fraction of targets that defines the response time.
    pub response_threshold: f64,
    pub methods: Vec<Method>,
    pub robot_counts: Vec<usize>,
    pub seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            horizon_s: 240.0,
            dt: 1.0,
            round_interval_s: 30.0,
            rounds: 7,
            update_every: 4,
            response_threshold: 0.9,
            methods: Method::ALL.to_vec(),
            robot_counts: vec![4, 8, 12],
            seeds: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("experiment.dt", "must be > 0"));
        }
        if !(self.horizon_s >= self.dt && self.horizon_s.is_finite()) {
            return Err(Error::config("experiment.horizon_s", "must be at least one tick"));
        }
        if !(self.round_interval_s >= self.dt && self.round_interval_s.is_finite()) {
            return Err(Error::config("experiment.round_interval_s", "must be at least one tick"));
        }
        if self.update_every == 0 {
            return Err(Error::config("experiment.update_every", "must be >= 1"));
        }
        if !(self.response_threshold > 0.0 && self.response_threshold <= 1.0) {
            return Err(Error::config("experiment.response_threshold", "must be in (0, 1]"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("experiment.methods", "must not be empty"));
        }
        if self.robot_counts.is_empty() || self.robot_counts.contains(&0) {
            return Err(Error::config("experiment.robot_counts", "must be a non-empty list of positive counts"));
        }
        if self.seeds == 0 {
            return Err(Error::config("experiment.seeds", "must be >= 1"));
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.horizon_s / self.dt).round() as usize
    }

    pub fn round_ticks(&self) -> usize {
        ((self.round_interval_s / self.dt).round() as usize).max(1)
    }
}
