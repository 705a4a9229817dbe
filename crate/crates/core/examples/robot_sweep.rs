//! Methods x robot counts x seeds at desk scale, summarised per cell.
//!
//! cargo run --release --example robot_sweep -- [seeds] [jobs] [robots,..]

use lsai::config::Scenario;
use lsai::experiment::{summarize, sweep, Method, SweepSpec};

fn main() -> lsai::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let jobs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let robots: Vec<usize> = args
        .get(3)
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_else(|| vec![4, 8, 12]);
    let sc = Scenario::default();
    let spec = SweepSpec {
        name: "desk".into(),
        methods: Method::ALL.to_vec(),
        robot_counts: robots,
        seeds: (0..seeds).collect(),
        jobs,
        timing: false,
    };
    let rows = sweep(&sc, &spec)?;
    println!("method       robots  accuracy       efficiency     response_s      bytes");
    for c in summarize(&rows, sc.experiment.horizon_s) {
        println!(
            "{:<12} {:>6}  {:.3} ± {:.3}  {:.3} ± {:.3}  {:>6.1} ± {:>5.1}  {:>10.0}",
            c.method.name(),
            c.n_robots,
            c.sensing_accuracy.mean,
            c.sensing_accuracy.std,
            c.path_efficiency.mean,
            c.path_efficiency.std,
            c.response_time_s.mean,
            c.response_time_s.std,
            c.bytes_transmitted.mean
        );
    }
    Ok(())
}
