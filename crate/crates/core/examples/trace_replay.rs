//! Records a short LSAI run, replays the trace, then nudges one robot and
//! shows the replay catching it.

use lsai::config::Scenario;
use lsai::experiment::{run_method, Method, RunOptions};
use lsai::trace::{replay, Trace};

fn main() -> lsai::Result<()> {
    let mut sc = Scenario::default();
    sc.world.n_robots = 4;
    sc.experiment.horizon_s = 60.0;
    sc.experiment.round_interval_s = 20.0;
    sc.experiment.rounds = 2;
    let out = run_method(Method::Lsai, &sc, 0, RunOptions { record_trace: true, timing: false })?;
    let text = out.trace.expect("trace recorded").render();
    println!("trace: {} lines, {} bytes", text.lines().count(), text.len());
    let s = replay(&Trace::parse(&text)?)?;
    println!("replay ok: ticks={} accuracy={} covered={}", s.ticks, s.accuracy, s.covered);

    let mut tampered = Trace::parse(&text)?;
    let p = &mut tampered.ticks[5].robots[0].position;
    p.x = sc.world.arena_size - p.x;
    p.y = sc.world.arena_size - p.y;
    match replay(&tampered) {
        Ok(_) => println!("tampering went unnoticed"),
        Err(e) => println!("tampered trace rejected: {e}"),
    }
    Ok(())
}
