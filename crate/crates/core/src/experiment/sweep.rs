//! The method x robot-count x seed grid.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::experiment::{run_method, CellSummary, Method, ResultRow, RunOptions, Stat};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// Prefix of every scenario id.
    pub name: String,
    pub methods: Vec<Method>,
    pub robot_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    pub jobs: usize,
    pub timing: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "no methods given"));
        }
        if self.robot_counts.is_empty() || self.robot_counts.contains(&0) {
            return Err(Error::config("robots", "robot counts must be a non-empty list of positive numbers"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs", "must be >= 1"));
        }
        Ok(())
    }
}

pub fn scenario_id(name: &str, n_robots: usize, seed: u64) -> String {
    format!("{name}-r{n_robots}-s{seed}")
}

/// Runs the full cross product. A failing run becomes a row with no
/// metrics; the others proceed. Rows come back sorted by method, robot
/// count and seed regardless of `jobs`.
pub fn sweep(scenario: &Scenario, spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    scenario.validate()?;
    let mut grid = Vec::new();
    for &m in &spec.methods {
        for &n in &spec.robot_counts {
            for &s in &spec.seeds {
                grid.push((m, n, s));
            }
        }
    }
    let one = |&(method, n, seed): &(Method, usize, u64)| -> ResultRow {
        let mut sc = scenario.clone();
        sc.world.n_robots = n;
        let options = RunOptions { record_trace: false, timing: spec.timing };
        let base = ResultRow {
            scenario_id: scenario_id(&spec.name, n, seed),
            method,
            n_robots: n,
            n_targets: sc.world.n_targets,
            seed,
            metrics: None,
            rounds: 0,
            wall_ms: 0,
            error: None,
        };
        match run_method(method, &sc, seed, options) {
            Ok(out) => ResultRow { metrics: Some(out.metrics), rounds: out.rounds.len(), wall_ms: out.wall_ms, ..base },
            Err(e) => ResultRow { error: Some(e.to_string()), ..base },
        }
    };
    let mut rows: Vec<ResultRow> = if spec.jobs == 1 {
        grid.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(|| grid.par_iter().map(one).collect())
    };
    rows.sort_by_key(|a| (a.method, a.n_robots, a.seed));
    Ok(rows)
}

/// Per (method, robot count) statistics; `horizon_s` stands in for
/// censored response times.
pub fn summarize(rows: &[ResultRow], horizon_s: f64) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(Method, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method, r.n_robots)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, n_robots), rs)| {
            let ok: Vec<_> = rs.iter().filter_map(|r| r.metrics).collect();
            let col = |f: &dyn Fn(&crate::experiment::Metrics) -> f64| Stat::of(&ok.iter().map(f).collect::<Vec<_>>());
            CellSummary {
                method,
                n_robots,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                censored: ok.iter().filter(|m| m.censored()).count(),
                sensing_accuracy: col(&|m| m.sensing_accuracy),
                path_efficiency: col(&|m| m.path_efficiency),
                response_time_s: col(&|m| m.response_time.min(horizon_s)),
                energy_total_j: col(&|m| m.energy_total),
                collisions: col(&|m| m.collisions as f64),
                bytes_transmitted: col(&|m| m.bytes_transmitted as f64),
            }
        })
        .collect()
}
