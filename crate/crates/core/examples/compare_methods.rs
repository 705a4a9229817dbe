//! One desk-scale scenario under all three methods, side by side.
//!
//! cargo run --release --example compare_methods -- [robots] [seed]

use lsai::config::Scenario;
use lsai::experiment::{run_method, Method, RunOptions};

fn main() -> lsai::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let robots = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut sc = Scenario::default();
    sc.world.n_robots = robots;
    println!("method       accuracy  efficiency  response_s  energy_j  collisions  bytes      wall_ms");
    for m in Method::ALL {
        let out = run_method(m, &sc, seed, RunOptions { record_trace: false, timing: true })?;
        let x = out.metrics;
        println!(
            "{:<12} {:>8.3}  {:>10.3}  {:>10.1}  {:>8.0}  {:>10}  {:>9}  {:>7}",
            m.name(),
            x.sensing_accuracy,
            x.path_efficiency,
            x.response_time,
            x.energy_total,
            x.collisions,
            x.bytes_transmitted,
            out.wall_ms
        );
    }
    Ok(())
}
