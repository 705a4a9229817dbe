//! Line-oriented world snapshots and their replay.
//!
//! ```text
//! lsai-trace 1
//! config {"arena_size":200.0,...}
//! obstacles 4 17
//! target 12.3 40.1
//! tick 0 clock 0
//! robot 0 12.5 7.5 1.2 50000
//! sensed 0100
//! covered 28
//! ...
//! end accuracy 0.5 covered 400 response_time inf threshold 0.9
//! ```

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::experiment::{response_time, sensing_accuracy};
use crate::world::{footprint, Point, WorldConfig, WorldState};

const MAGIC: &str = "lsai-trace 1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotSample {
    pub position: Point,
    pub heading: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub clock: f64,
    pub robots: Vec<RobotSample>,
    pub sensed: Vec<bool>,
    pub covered: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEnd {
    pub accuracy: f64,
    pub covered: usize,
    pub response_time: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub config: WorldConfig,
    pub obstacles: Vec<usize>,
    pub targets: Vec<Point>,
    pub ticks: Vec<TickRecord>,
    pub end: Option<TraceEnd>,
}

impl Trace {
    /// Starts a trace with the world's current state as tick 0.
    pub fn start(world: &WorldState) -> Self {
        let mut t = Self {
            config: world.config.clone(),
            obstacles: (0..world.obstacles.len()).filter(|c| world.obstacles[*c]).collect(),
            targets: world.targets.iter().map(|t| t.position).collect(),
            ticks: Vec::new(),
            end: None,
        };
        t.record(world);
        t
    }

    pub fn record(&mut self, world: &WorldState) {
        self.ticks.push(TickRecord {
            tick: self.ticks.len(),
            clock: world.clock,
            robots: world
                .robots
                .iter()
                .map(|r| RobotSample { position: r.position, heading: r.heading, energy: r.energy })
                .collect(),
            sensed: world.targets.iter().map(|t| t.sensed).collect(),
            covered: world.covered_cells(),
        });
    }

    pub fn finish(&mut self, world: &WorldState, threshold: f64) {
        self.end = Some(TraceEnd {
            accuracy: sensing_accuracy(world),
            covered: world.covered_cells(),
            response_time: response_time(world, threshold),
            threshold,
        });
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.render().as_bytes())?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let config = serde_json::to_string(&self.config).expect("world config serializes");
        let _ = writeln!(s, "{MAGIC}\nconfig {config}");
        s.push_str("obstacles");
        for c in &self.obstacles {
            let _ = write!(s, " {c}");
        }
        s.push('\n');
        for p in &self.targets {
            let _ = writeln!(s, "target {} {}", p.x, p.y);
        }
        for t in &self.ticks {
            let _ = writeln!(s, "tick {} clock {}", t.tick, t.clock);
            for (i, r) in t.robots.iter().enumerate() {
                let _ = writeln!(s, "robot {i} {} {} {} {}", r.position.x, r.position.y, r.heading, r.energy);
            }
            s.push_str("sensed ");
            s.extend(t.sensed.iter().map(|b| if *b { '1' } else { '0' }));
            let _ = writeln!(s, "\ncovered {}", t.covered);
        }
        if let Some(e) = &self.end {
            let _ = writeln!(
                s,
                "end accuracy {} covered {} response_time {} threshold {}",
                e.accuracy, e.covered, e.response_time, e.threshold
            );
        }
        s
    }

    /// Parses a complete trace. A file without its `end` line is reported
    /// as truncated, naming the first tick that is not fully present.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let bad = |n: usize, msg: &str| Error::Trace(format!("line {}: {msg}", n + 1));
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(Error::Trace("not a trace file (bad header)".into())),
        }
        let (n, l) = lines.next().ok_or_else(|| Error::Trace("missing config line".into()))?;
        let json = l.strip_prefix("config ").ok_or_else(|| bad(n, "expected config"))?;
        let config: WorldConfig = serde_json::from_str(json).map_err(|e| bad(n, &format!("bad config: {e}")))?;
        let (n, l) = lines.next().ok_or_else(|| Error::Trace("missing obstacles line".into()))?;
        let rest = l.strip_prefix("obstacles").ok_or_else(|| bad(n, "expected obstacles"))?;
        let obstacles = rest
            .split_whitespace()
            .map(|w| w.parse::<usize>().map_err(|_| bad(n, "bad obstacle cell")))
            .collect::<Result<Vec<_>>>()?;
        let mut targets = Vec::new();
        while let Some((n, l)) = lines.peek().copied() {
            let Some(rest) = l.strip_prefix("target ") else { break };
            let v = floats(rest, 2).ok_or_else(|| bad(n, "bad target"))?;
            targets.push(Point::new(v[0], v[1]));
            lines.next();
        }
        let mut trace = Trace { config, obstacles, targets, ticks: Vec::new(), end: None };
        let truncated = |k: usize| Error::Trace(format!("truncated: tick {k} missing"));
        loop {
            let Some((n, l)) = lines.next() else {
                return Err(truncated(trace.ticks.len()));
            };
            if let Some(rest) = l.strip_prefix("end ") {
                trace.end = Some(parse_end(rest).ok_or_else(|| bad(n, "bad end line"))?);
                return Ok(trace);
            }
            let expected = trace.ticks.len();
            let words: Vec<&str> = l.split_whitespace().collect();
            let (tick, clock) = match words.as_slice() {
                ["tick", t, "clock", c] => (
                    t.parse::<usize>().map_err(|_| bad(n, "bad tick index"))?,
                    c.parse::<f64>().map_err(|_| bad(n, "bad clock"))?,
                ),
                _ => return Err(truncated(expected)),
            };
            if tick != expected {
                return Err(Error::Trace(format!("tick {expected} missing (found tick {tick})")));
            }
            let mut robots = Vec::new();
            while let Some((n, l)) = lines.peek().copied() {
                let Some(rest) = l.strip_prefix("robot ") else { break };
                let v = floats(rest, 5).ok_or_else(|| truncated(expected))?;
                if v[0] as usize != robots.len() {
                    return Err(bad(n, "robot lines out of order"));
                }
                robots.push(RobotSample { position: Point::new(v[1], v[2]), heading: v[3], energy: v[4] });
                lines.next();
            }
            let sensed = match lines.next() {
                Some((_, l)) if l.starts_with("sensed ") && l.len() == 7 + trace.targets.len() => {
                    l[7..].chars().map(|c| c == '1').collect()
                }
                _ => return Err(truncated(expected)),
            };
            let covered = match lines.next().and_then(|(_, l)| l.strip_prefix("covered ")?.parse::<usize>().ok()) {
                Some(c) => c,
                None => return Err(truncated(expected)),
            };
            trace.ticks.push(TickRecord { tick, clock, robots, sensed, covered });
        }
    }
}

fn floats(s: &str, n: usize) -> Option<Vec<f64>> {
    let v: Vec<f64> = s.split_whitespace().map(|w| w.parse().ok()).collect::<Option<_>>()?;
    (v.len() == n).then_some(v)
}

fn parse_end(s: &str) -> Option<TraceEnd> {
    let w: Vec<&str> = s.split_whitespace().collect();
    match w.as_slice() {
        ["accuracy", a, "covered", c, "response_time", r, "threshold", t] => Some(TraceEnd {
            accuracy: a.parse().ok()?,
            covered: c.parse().ok()?,
            response_time: r.parse().ok()?,
            threshold: t.parse().ok()?,
        }),
        _ => None,
    }
}

/// What replay recomputed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplaySummary {
    pub ticks: usize,
    pub accuracy: f64,
    pub covered: usize,
    pub response_time: f64,
}

/// Rebuilds coverage and sensing from the recorded robot positions and
/// checks every tick, the energy ledger and the final metrics against what
/// the trace claims.
pub fn replay(trace: &Trace) -> Result<ReplaySummary> {
    let cfg = &trace.config;
    cfg.validate()?;
    let end = trace.end.ok_or_else(|| Error::Trace(format!("truncated: tick {} missing", trace.ticks.len())))?;
    let first = trace.ticks.first().ok_or_else(|| Error::Trace("truncated: tick 0 missing".into()))?;
    let poses: Vec<(Point, f64)> = first.robots.iter().map(|r| (r.position, r.heading)).collect();
    let mut world = WorldState::from_parts(cfg.clone(), &poses, &trace.targets, &trace.obstacles)?;
    let mut coverage = vec![false; cfg.cell_count()];
    let mut covered = 0usize;
    let mut distance = vec![0.0; poses.len()];
    for (k, t) in trace.ticks.iter().enumerate() {
        if t.robots.len() != poses.len() {
            return Err(Error::Trace(format!("tick {k}: {} robots, expected {}", t.robots.len(), poses.len())));
        }
        if k > 0 {
            let prev = &trace.ticks[k - 1];
            for (i, (a, b)) in prev.robots.iter().zip(&t.robots).enumerate() {
                distance[i] += a.position.distance(&b.position);
            }
        }
        for r in t.robots.iter().filter(|r| r.energy > 0.0) {
            for &c in footprint(r.position, cfg.sensing_radius, cfg).as_slice() {
                if !coverage[c] {
                    coverage[c] = true;
                    covered += 1;
                }
            }
        }
        if covered != t.covered {
            return Err(Error::Trace(format!(
                "coverage mismatch at tick {k}: recorded {}, recomputed {covered}",
                t.covered
            )));
        }
        for (i, r) in t.robots.iter().enumerate().filter(|(_, r)| r.energy > 0.0) {
            let expected = cfg.initial_energy - cfg.idle_power * t.clock - cfg.move_energy * distance[i];
            if (expected - r.energy).abs() > 1e-6 * cfg.initial_energy.max(1.0) {
                return Err(Error::Trace(format!(
                    "energy mismatch at tick {k} for robot {i}: recorded {}, ledger gives {expected}",
                    r.energy
                )));
            }
        }
        for (j, target) in world.targets.iter_mut().enumerate() {
            let now = coverage[cfg.cell_of(target.position)];
            if now && !target.sensed {
                target.sensed = true;
                target.first_sensed_time = Some(t.clock);
            }
            if t.sensed.get(j) != Some(&target.sensed) {
                return Err(Error::Trace(format!("sensed flags mismatch at tick {k} for target {j}")));
            }
        }
        world.clock = t.clock;
    }
    let summary = ReplaySummary {
        ticks: trace.ticks.len(),
        accuracy: sensing_accuracy(&world),
        covered,
        response_time: response_time(&world, end.threshold),
    };
    if summary.accuracy != end.accuracy || summary.covered != end.covered || summary.response_time != end.response_time
    {
        return Err(Error::Trace(format!(
            "final metrics mismatch: recorded accuracy {} covered {} response_time {}, recomputed {} {} {}",
            end.accuracy, end.covered, end.response_time, summary.accuracy, summary.covered, summary.response_time
        )));
    }
    Ok(summary)
}
