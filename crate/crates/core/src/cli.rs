//! Command-line front end: `run`, `sweep`, `verify` and `replay`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
//! Progress goes to stdout as `key=value` lines; errors go to stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::comms::write_packet_log;
use crate::config::Scenario;
use crate::experiment::{
    run_method, summarize, sweep, write_results_csv, write_round_reports, write_summary_csv, write_summary_json,
    Method, ResultRow, RunOptions, SweepSpec,
};
use crate::trace::{replay, Trace};
use crate::verify::{run_suite, VerifyOptions, SUITES};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lsai", version, about = "Multi-robot search simulator with edge model aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One run of one method; writes results.csv, rounds.jsonl, packets.csv and trace.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "LSAI")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Record wall-clock time in wall_ms; outputs are then no longer reproducible.
        #[arg(long)]
        timing: bool,
    },
    /// Methods x robot counts x seeds; writes results.csv, summary.csv and summary.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated robot counts.
        #[arg(long, value_delimiter = ',')]
        robots: Vec<String>,
        /// Seeds 0..N.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// `all` or a comma-separated list of methods.
        #[arg(long, default_value = "all")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        timing: bool,
    },
    /// Oracle suites; exit 0 iff all pass.
    Verify {
        /// Run only these suites (repeatable).
        #[arg(long)]
        suite: Vec<String>,
        #[arg(long, hide = true)]
        corrupt_mask_bit: bool,
    },
    /// Recomputes coverage and metrics from a trace and checks the recorded values.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

type Outcome = std::result::Result<i32, Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run { config, method, seed, out, timing } => cmd_run(&config, &method, seed, &out, timing),
        Command::Sweep { config, robots, seeds, method, out, jobs, timing } => {
            cmd_sweep(&config, &robots, seeds, &method, &out, jobs, timing)
        }
        Command::Verify { suite, corrupt_mask_bit } => cmd_verify(&suite, corrupt_mask_bit),
        Command::Replay { trace } => cmd_replay(&trace),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn scenario_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

fn create(dir: &Path, name: &str) -> std::result::Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("cannot write {}: {e}", path.display()) })
}

fn make_out_dir(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("cannot create {}: {e}", dir.display()) })
}

fn parse_methods(text: &str) -> std::result::Result<Vec<Method>, Failure> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut methods: Vec<Method> = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse().map_err(|e: Error| config_error(e.to_string()))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(config_error("configuration error at `method`: no methods given"));
    }
    Ok(methods)
}

fn cmd_run(config: &Path, method: &str, seed: u64, out: &Path, timing: bool) -> Outcome {
    let scenario = Scenario::load(config)?;
    let method: Method = method.parse().map_err(|e: Error| config_error(e.to_string()))?;
    make_out_dir(out)?;
    let options = RunOptions { record_trace: true, timing };
    let result = run_method(method, &scenario, seed, options)?;
    let row = ResultRow {
        scenario_id: crate::experiment::scenario_id(&scenario_name(config), result.n_robots, seed),
        method,
        n_robots: result.n_robots,
        n_targets: result.n_targets,
        seed,
        metrics: Some(result.metrics),
        rounds: result.rounds.len(),
        wall_ms: result.wall_ms,
        error: None,
    };
    write_results_csv(create(out, "results.csv")?, std::slice::from_ref(&row))?;
    write_round_reports(create(out, "rounds.jsonl")?, &result.rounds)?;
    write_packet_log(create(out, "packets.csv")?, &result.packets)?;
    if let Some(trace) = &result.trace {
        let mut w = create(out, "trace.txt")?;
        trace.write(&mut w)?;
        w.flush().map_err(Error::from)?;
    }
    for r in &result.rounds {
        println!(
            "round={} time_s={} participants={} bytes={} accuracy={} warnings={}",
            r.round,
            r.time_s,
            r.participants.len(),
            r.bytes,
            r.sensing_accuracy,
            r.warnings.len()
        );
    }
    let m = &result.metrics;
    println!(
        "method={} seed={} n_robots={} sensing_accuracy={} path_efficiency={} response_time_s={} censored={} \
         energy_total_j={} collisions={} bytes_transmitted={} rounds={} out={}",
        method,
        seed,
        result.n_robots,
        m.sensing_accuracy,
        m.path_efficiency,
        m.response_time,
        m.censored(),
        m.energy_total,
        m.collisions,
        m.bytes_transmitted,
        result.rounds.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    robots: &[String],
    seeds: u64,
    method: &str,
    out: &Path,
    jobs: usize,
    timing: bool,
) -> Outcome {
    let scenario = Scenario::load(config)?;
    let mut counts = Vec::new();
    for r in robots.iter().map(|r| r.trim()).filter(|r| !r.is_empty()) {
        counts.push(
            r.parse::<usize>()
                .map_err(|_| config_error(format!("configuration error at `robots`: `{r}` is not a robot count")))?,
        );
    }
    let spec = SweepSpec {
        name: scenario_name(config),
        methods: parse_methods(method)?,
        robot_counts: counts,
        seeds: (0..seeds).collect(),
        jobs,
        timing,
    };
    spec.validate()?;
    make_out_dir(out)?;
    let started = Instant::now();
    let rows = sweep(&scenario, &spec)?;
    let cells = summarize(&rows, scenario.experiment.horizon_s);
    write_results_csv(create(out, "results.csv")?, &rows)?;
    write_summary_csv(create(out, "summary.csv")?, &cells)?;
    write_summary_json(create(out, "summary.json")?, &cells)?;
    for r in rows.iter().filter(|r| r.error.is_some()) {
        println!(
            "failed scenario_id={} method={} error={:?}",
            r.scenario_id,
            r.method,
            r.error.as_deref().unwrap_or_default()
        );
    }
    for c in &cells {
        println!(
            "method={} n_robots={} runs={} failed={} censored={} accuracy_mean={:.4} efficiency_mean={:.4} \
             response_time_mean_s={:.2} bytes_mean={:.0}",
            c.method,
            c.n_robots,
            c.runs,
            c.failed,
            c.censored,
            c.sensing_accuracy.mean,
            c.path_efficiency.mean,
            c.response_time_s.mean,
            c.bytes_transmitted.mean
        );
    }
    let failed = rows.iter().filter(|r| r.metrics.is_none()).count();
    let mut summary = format!("rows={} failed={} out={}", rows.len(), failed, out.display());
    if timing {
        summary.push_str(&format!(" wall_s={:.1}", started.elapsed().as_secs_f64()));
    }
    println!("{summary}");
    Ok(if failed == rows.len() { EXIT_RUNTIME } else { EXIT_OK })
}

fn cmd_verify(selected: &[String], corrupt_mask_bit: bool) -> Outcome {
    for s in selected {
        if !SUITES.contains(&s.as_str()) {
            return Err(config_error(format!("unknown suite `{s}`; known: {}", SUITES.join(", "))));
        }
    }
    let options = VerifyOptions { corrupt_mask_bit };
    let mut failed = 0;
    let mut ran = 0;
    for name in SUITES.iter().filter(|s| selected.is_empty() || selected.iter().any(|x| x == *s)) {
        let t = Instant::now();
        let r = run_suite(name, &options).expect("known suite");
        let ms = t.elapsed().as_millis();
        ran += 1;
        if r.passed {
            println!("suite={} status=pass elapsed_ms={ms} {}", r.name, r.detail);
        } else {
            failed += 1;
            println!("suite={} status=fail elapsed_ms={ms} reason={:?}", r.name, r.detail);
        }
    }
    let status = if failed == 0 { "pass" } else { "fail" };
    println!("verify status={status} suites={ran} failed={failed}");
    Ok(if failed == 0 { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_replay(path: &Path) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let trace = Trace::parse(&text).map_err(runtime)?;
    let s = replay(&trace).map_err(runtime)?;
    println!(
        "replay status=ok ticks={} sensing_accuracy={} covered={} response_time_s={}",
        s.ticks, s.accuracy, s.covered, s.response_time
    );
    Ok(EXIT_OK)
}

fn runtime(e: Error) -> Failure {
    Failure { code: EXIT_RUNTIME, message: e.to_string() }
}
