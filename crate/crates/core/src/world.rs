//! The 2D sensing arena.
//!
//! A square arena is split into square cells. Robots carry a disk-shaped
//! sensing footprint (all cells whose centres lie within the sensing radius),
//! move under a turn-rate-limited unicycle model, pay idle and motion energy,
//! and sense a target the first time the target's cell falls inside any live
//! footprint.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RobotId = u32;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Side of the square arena in metres.
    pub arena_size: f64,
    pub cell_size: f64,
    pub n_robots: usize,
    pub n_targets: usize,
    /// Metres per second.
    pub max_speed: f64,
    pub sensing_radius: f64,
    pub obstacle_fraction: f64,
    pub seed: u64,
    /// Joules per second while alive.
    pub idle_power: f64,
    /// Joules per metre travelled.
    pub move_energy: f64,
    pub initial_energy: f64,
    /// Radians per second.
    pub max_turn_rate: f64,
    /// Robots closer than this (metres) collide.
    pub collision_distance: f64,
    /// Recent positions kept per robot.
    pub trajectory_len: usize,
    /// Side of a frontier region, in cells.
    pub region_cells: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena_size: 200.0,
            cell_size: 5.0,
            n_robots: 8,
            n_targets: 10,
            max_speed: 1.5,
            sensing_radius: 15.0,
            obstacle_fraction: 0.0,
            seed: 0,
            idle_power: 1.0,
            move_energy: 5.0,
            initial_energy: 50_000.0,
            max_turn_rate: PI / 2.0,
            collision_distance: 2.0,
            trajectory_len: 64,
            region_cells: 4,
        }
    }
}

impl WorldConfig {
    /// Cells along one side of the arena.
    pub fn side_cells(&self) -> usize {
        (self.arena_size / self.cell_size).round() as usize
    }

    pub fn cell_count(&self) -> usize {
        self.side_cells() * self.side_cells()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("world.{key}"), msg))
            }
        };
        check(
            self.cell_size > 0.0 && self.cell_size.is_finite(),
            "cell_size",
            format!("must be > 0, got {}", self.cell_size),
        )?;
        check(
            self.arena_size > 0.0 && self.arena_size.is_finite(),
            "arena_size",
            format!("must be > 0, got {}", self.arena_size),
        )?;
        let side = self.arena_size / self.cell_size;
        check(
            (side - side.round()).abs() < 1e-9 && side.round() >= 4.0,
            "arena_size",
            format!("{} m is not divisible into at least 4x4 cells of {} m", self.arena_size, self.cell_size),
        )?;
        check(self.n_targets >= 1, "n_targets", "at least one target is required".into())?;
        check(self.max_speed > 0.0, "max_speed", format!("must be > 0, got {}", self.max_speed))?;
        check(self.sensing_radius > 0.0, "sensing_radius", format!("must be > 0, got {}", self.sensing_radius))?;
        check(
            (0.0..1.0).contains(&self.obstacle_fraction),
            "obstacle_fraction",
            format!("must be in [0, 1), got {}", self.obstacle_fraction),
        )?;
        check(self.idle_power >= 0.0, "idle_power", "must be >= 0".into())?;
        check(self.move_energy >= 0.0, "move_energy", "must be >= 0".into())?;
        check(self.initial_energy > 0.0, "initial_energy", "must be > 0".into())?;
        check(self.max_turn_rate > 0.0, "max_turn_rate", "must be > 0".into())?;
        check(self.collision_distance > 0.0, "collision_distance", "must be > 0".into())?;
        check(self.trajectory_len >= 1, "trajectory_len", "must be >= 1".into())?;
        check(self.region_cells >= 1, "region_cells", "must be >= 1".into())?;
        Ok(())
    }

    pub fn cell_of(&self, p: Point) -> usize {
        let side = self.side_cells();
        let col = ((p.x / self.cell_size).floor().max(0.0) as usize).min(side - 1);
        let row = ((p.y / self.cell_size).floor().max(0.0) as usize).min(side - 1);
        row * side + col
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let side = self.side_cells();
        let (row, col) = (cell / side, cell % side);
        Point::new((col as f64 + 0.5) * self.cell_size, (row as f64 + 0.5) * self.cell_size)
    }
}

/// Sorted set of cell indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CellSet(Vec<usize>);

impl CellSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.0.binary_search(&cell).is_ok()
    }

    pub fn intersection_len(&self, other: &CellSet) -> usize {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

impl FromIterator<usize> for CellSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when both sets are empty.
pub fn jaccard(a: &CellSet, b: &CellSet) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// All cells whose centres lie within `radius` of `position`.
pub fn footprint(position: Point, radius: f64, config: &WorldConfig) -> CellSet {
    let side = config.side_cells() as isize;
    let cs = config.cell_size;
    let lo = |v: f64| (((v - radius) / cs - 0.5).floor() as isize).clamp(0, side - 1);
    let hi = |v: f64| (((v + radius) / cs - 0.5).ceil() as isize).clamp(0, side - 1);
    let r2 = radius * radius;
    let mut cells = Vec::new();
    for row in lo(position.y)..=hi(position.y) {
        let cy = (row as f64 + 0.5) * cs;
        for col in lo(position.x)..=hi(position.x) {
            let cx = (col as f64 + 0.5) * cs;
            let (dx, dy) = (cx - position.x, cy - position.y);
            if dx * dx + dy * dy <= r2 {
                cells.push(row as usize * side as usize + col as usize);
            }
        }
    }
    CellSet(cells)
}

/// Motion command in world terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Command {
    /// Desired absolute heading, radians.
    pub heading: f64,
    /// Desired speed, m/s; clamped to `[0, max_speed]`.
    pub speed: f64,
}

impl Command {
    pub const HOLD: Command = Command { heading: 0.0, speed: 0.0 };
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub id: RobotId,
    pub position: Point,
    pub velocity: Point,
    pub heading: f64,
    pub energy: f64,
    pub trajectory: VecDeque<Point>,
    pub footprint: CellSet,
    pub distance_traveled: f64,
    pub energy_spent: f64,
}

impl RobotState {
    pub fn alive(&self) -> bool {
        self.energy > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub position: Point,
    pub sensed: bool,
    pub first_sensed_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Collision {
    pub time: f64,
    pub a: RobotId,
    pub b: RobotId,
}

/// What one robot experienced during one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobotDelta {
    pub new_cells: usize,
    pub energy_spent: f64,
    pub distance: f64,
    pub collided: bool,
    /// Largest footprint Jaccard index with any other robot.
    pub max_jaccard: f64,
}

/// Incremental index of uncovered cells per coarse region.
#[derive(Clone, Debug, PartialEq)]
struct Frontier {
    region_side: usize,
    uncovered: Vec<u32>,
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
}

impl Frontier {
    fn new(config: &WorldConfig) -> Self {
        let side = config.side_cells();
        let region_side = side.div_ceil(config.region_cells);
        let n = region_side * region_side;
        let mut f = Self { region_side, uncovered: vec![0; n], sum_x: vec![0.0; n], sum_y: vec![0.0; n] };
        for cell in 0..config.cell_count() {
            let r = f.region_of(cell, config);
            let c = config.cell_center(cell);
            f.uncovered[r] += 1;
            f.sum_x[r] += c.x;
            f.sum_y[r] += c.y;
        }
        f
    }

    fn region_of(&self, cell: usize, config: &WorldConfig) -> usize {
        let side = config.side_cells();
        let (row, col) = (cell / side, cell % side);
        (row / config.region_cells) * self.region_side + col / config.region_cells
    }

    fn cover(&mut self, cell: usize, config: &WorldConfig) {
        let r = self.region_of(cell, config);
        let c = config.cell_center(cell);
        self.uncovered[r] -= 1;
        self.sum_x[r] -= c.x;
        self.sum_y[r] -= c.y;
    }

    /// Region whose uncovered-cell centroid is closest to `p`.
    fn nearest_region(&self, p: Point) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for r in 0..self.uncovered.len() {
            let n = self.uncovered[r];
            if n == 0 {
                continue;
            }
            let c = Point::new(self.sum_x[r] / n as f64, self.sum_y[r] / n as f64);
            let d = c.distance(&p);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
        best.map(|(_, r)| r)
    }

    fn region_cells(&self, region: usize, config: &WorldConfig) -> impl Iterator<Item = usize> {
        let side = config.side_cells();
        let k = config.region_cells;
        let (r0, c0) = ((region / self.region_side) * k, (region % self.region_side) * k);
        (r0..(r0 + k).min(side)).flat_map(move |row| (c0..(c0 + k).min(side)).map(move |col| row * side + col))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub config: WorldConfig,
    pub robots: Vec<RobotState>,
    pub targets: Vec<Target>,
    /// Ever-covered bitmap, one entry per cell.
    pub coverage: Vec<bool>,
    pub obstacles: Vec<bool>,
    /// Simulated seconds.
    pub clock: f64,
    pub collision_log: Vec<Collision>,
    /// Cells covered by the footprints at spawn time.
    pub initial_covered: usize,
    covered_count: usize,
    frontier: Frontier,
}

impl WorldState {
    /// Random deployment of obstacles, robots and targets, deterministic per
    /// `config.seed`.
    pub fn spawn(config: &WorldConfig) -> Result<WorldState> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cells = config.cell_count();
        let n_obstacles = (config.obstacle_fraction * cells as f64).floor() as usize;
        let free = cells - n_obstacles;
        if config.n_robots > free || config.n_targets > free {
            return Err(Error::Placement(format!(
                "{} robots and {} targets requested but only {free} free cells",
                config.n_robots, config.n_targets
            )));
        }
        let mut obstacles = vec![false; cells];
        for c in index::sample(&mut rng, cells, n_obstacles) {
            obstacles[c] = true;
        }
        let free_cells: Vec<usize> = (0..cells).filter(|c| !obstacles[*c]).collect();
        let robot_cells = index::sample(&mut rng, free_cells.len(), config.n_robots);
        let robots: Vec<(Point, f64)> =
            robot_cells.iter().map(|i| (config.cell_center(free_cells[i]), rng.gen_range(0.0..TAU))).collect();
        let target_cells = index::sample(&mut rng, free_cells.len(), config.n_targets);
        let targets: Vec<Point> = target_cells
            .iter()
            .map(|i| {
                let c = config.cell_center(free_cells[i]);
                let h = config.cell_size / 2.0;
                Point::new(c.x + rng.gen_range(-h..h), c.y + rng.gen_range(-h..h))
            })
            .collect();
        let obstacle_cells: Vec<usize> = (0..cells).filter(|c| obstacles[*c]).collect();
        Self::from_parts(config.clone(), &robots, &targets, &obstacle_cells)
    }

    /// Builds a world with explicit robot poses, targets and obstacle cells.
    pub fn from_parts(
        config: WorldConfig,
        robots: &[(Point, f64)],
        targets: &[Point],
        obstacle_cells: &[usize],
    ) -> Result<WorldState> {
        config.validate()?;
        let cells = config.cell_count();
        let mut obstacles = vec![false; cells];
        for &c in obstacle_cells {
            if c >= cells {
                return Err(Error::Placement(format!("obstacle cell {c} outside the grid")));
            }
            obstacles[c] = true;
        }
        let inside = |p: &Point| (0.0..=config.arena_size).contains(&p.x) && (0.0..=config.arena_size).contains(&p.y);
        let mut robot_states = Vec::with_capacity(robots.len());
        for (i, (p, h)) in robots.iter().enumerate() {
            if !inside(p) {
                return Err(Error::Placement(format!("robot {i} at ({}, {}) is outside the arena", p.x, p.y)));
            }
            let mut trajectory = VecDeque::with_capacity(config.trajectory_len);
            trajectory.push_back(*p);
            robot_states.push(RobotState {
                id: i as RobotId,
                position: *p,
                velocity: Point::default(),
                heading: *h,
                energy: config.initial_energy,
                trajectory,
                footprint: footprint(*p, config.sensing_radius, &config),
                distance_traveled: 0.0,
                energy_spent: 0.0,
            });
        }
        if let Some(p) = targets.iter().find(|p| !inside(p)) {
            return Err(Error::Placement(format!("target at ({}, {}) is outside the arena", p.x, p.y)));
        }
        let frontier = Frontier::new(&config);
        let mut world = WorldState {
            targets: targets.iter().map(|p| Target { position: *p, sensed: false, first_sensed_time: None }).collect(),
            robots: robot_states,
            coverage: vec![false; cells],
            obstacles,
            clock: 0.0,
            collision_log: Vec::new(),
            initial_covered: 0,
            covered_count: 0,
            frontier,
            config,
        };
        world.absorb_footprints();
        world.initial_covered = world.covered_count;
        Ok(world)
    }

    /// Marks live footprints as covered and senses targets in newly covered
    /// cells. Returns per-robot counts of cells that were uncovered before.
    fn absorb_footprints(&mut self) -> Vec<usize> {
        let mut fresh = vec![0; self.robots.len()];
        for (i, r) in self.robots.iter().enumerate() {
            fresh[i] = r.footprint.as_slice().iter().filter(|c| !self.coverage[**c]).count();
        }
        for r in &self.robots {
            for &c in r.footprint.as_slice() {
                if !self.coverage[c] {
                    self.coverage[c] = true;
                    self.covered_count += 1;
                    self.frontier.cover(c, &self.config);
                }
            }
        }
        for t in &mut self.targets {
            if !t.sensed && self.coverage[self.config.cell_of(t.position)] {
                t.sensed = true;
                t.first_sensed_time = Some(self.clock);
            }
        }
        fresh
    }

    pub fn covered_cells(&self) -> usize {
        self.covered_count
    }

    pub fn sensed_count(&self) -> usize {
        self.targets.iter().filter(|t| t.sensed).count()
    }

    pub fn is_obstacle(&self, p: Point) -> bool {
        self.obstacles[self.config.cell_of(p)]
    }

    /// The region with the nearest uncovered-cell centroid, resolved to its
    /// uncovered cell closest to `p`. A centroid alone can fall on ground
    /// that is already covered.
    pub fn nearest_frontier(&self, p: Point) -> Option<Point> {
        let region = self.frontier.nearest_region(p)?;
        self.frontier
            .region_cells(region, &self.config)
            .filter(|c| !self.coverage[*c])
            .map(|c| self.config.cell_center(c))
            .min_by(|a, b| a.distance(&p).total_cmp(&b.distance(&p)))
    }

    /// Advances the world by `dt` seconds. `commands[i]` drives robot `i`;
    /// commands for robots without energy are ignored.
    pub fn step(&mut self, commands: &[Command], dt: f64) -> Result<Vec<RobotDelta>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
        }
        if commands.len() != self.robots.len() {
            return Err(Error::DimensionMismatch {
                context: "world step commands",
                expected: self.robots.len(),
                actual: commands.len(),
            });
        }
        let cfg = &self.config;
        let mut deltas = vec![RobotDelta::default(); self.robots.len()];
        for (r, (cmd, delta)) in self.robots.iter_mut().zip(commands.iter().zip(&mut deltas)) {
            if !r.alive() {
                r.velocity = Point::default();
                r.footprint = CellSet::new();
                continue;
            }
            let max_turn = cfg.max_turn_rate * dt;
            let turn = wrap_angle(cmd.heading - r.heading).clamp(-max_turn, max_turn);
            r.heading = wrap_angle(r.heading + turn);
            let speed = if cmd.speed.is_finite() { cmd.speed.clamp(0.0, cfg.max_speed) } else { 0.0 };
            let step = speed * dt;
            let mut next = Point::new(r.position.x + step * r.heading.cos(), r.position.y + step * r.heading.sin());
            next.x = next.x.clamp(0.0, cfg.arena_size);
            next.y = next.y.clamp(0.0, cfg.arena_size);
            if self.obstacles[cfg.cell_of(next)] {
                next = r.position;
            }
            let dist = next.distance(&r.position);
            let mut spend = cfg.idle_power * dt + cfg.move_energy * dist;
            if spend >= r.energy {
                spend = r.energy;
                r.energy = 0.0;
            } else {
                r.energy -= spend;
            }
            r.velocity = Point::new((next.x - r.position.x) / dt, (next.y - r.position.y) / dt);
            r.position = next;
            r.distance_traveled += dist;
            r.energy_spent += spend;
            if r.trajectory.len() == cfg.trajectory_len {
                r.trajectory.pop_front();
            }
            r.trajectory.push_back(next);
            r.footprint = if r.alive() { footprint(next, cfg.sensing_radius, cfg) } else { CellSet::new() };
            delta.energy_spent = spend;
            delta.distance = dist;
        }
        self.clock += dt;
        let fresh = self.absorb_footprints();
        let n = self.robots.len();
        for i in 0..n {
            deltas[i].new_cells = fresh[i];
            for j in (i + 1)..n {
                let (a, b) = (&self.robots[i], &self.robots[j]);
                let jac = jaccard(&a.footprint, &b.footprint);
                deltas[i].max_jaccard = deltas[i].max_jaccard.max(jac);
                deltas[j].max_jaccard = deltas[j].max_jaccard.max(jac);
                if a.position.distance(&b.position) < self.config.collision_distance {
                    deltas[i].collided = true;
                    deltas[j].collided = true;
                    self.collision_log.push(Collision { time: self.clock, a: a.id, b: b.id });
                }
            }
        }
        Ok(deltas)
    }
}
