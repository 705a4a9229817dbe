//! Run-level metrics computed from a finished world.

use serde::{Deserialize, Serialize};

use crate::world::WorldState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensing_accuracy: f64,
    pub path_efficiency: f64,
    /// Seconds; infinite when the threshold was never reached.
    pub response_time: f64,
    pub energy_total: f64,
    pub collisions: usize,
    pub bytes_transmitted: u64,
}

impl Metrics {
    pub fn censored(&self) -> bool {
        self.response_time.is_infinite()
    }

    pub fn from_world(world: &WorldState, threshold: f64, bytes_transmitted: u64) -> Self {
        Self {
            sensing_accuracy: sensing_accuracy(world),
            path_efficiency: path_efficiency(world),
            response_time: response_time(world, threshold),
            energy_total: world.robots.iter().map(|r| r.energy_spent).sum(),
            collisions: world.collision_log.len(),
            bytes_transmitted,
        }
    }
}

/// Fraction of targets sensed.
pub fn sensing_accuracy(world: &WorldState) -> f64 {
    if world.targets.is_empty() {
        return 0.0;
    }
    world.sensed_count() as f64 / world.targets.len() as f64
}

/// Cells newly covered after spawn, relative to what the robots' footprints
/// could have swept over the distance they drove, clipped to [0, 1]. No
/// movement gives 0.
pub fn path_efficiency(world: &WorldState) -> f64 {
    let distance: f64 = world.robots.iter().map(|r| r.distance_traveled).sum();
    if distance <= 0.0 {
        return 0.0;
    }
    let cfg = &world.config;
    let bound = distance * 2.0 * cfg.sensing_radius / (cfg.cell_size * cfg.cell_size);
    let gained = world.covered_cells().saturating_sub(world.initial_covered) as f64;
    (gained / bound).clamp(0.0, 1.0)
}

/// Clock at which the sensed fraction first reached `threshold`, i.e. the
/// first-sensed time of the `ceil(threshold * n)`-th target. Infinite if
/// that many targets were never sensed.
pub fn response_time(world: &WorldState, threshold: f64) -> f64 {
    let n = world.targets.len();
    let need = ((threshold * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut times: Vec<f64> = world.targets.iter().filter_map(|t| t.first_sensed_time).collect();
    if times.len() < need {
        return f64::INFINITY;
    }
    times.sort_by(f64::total_cmp);
    times[need - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Command, Point, WorldConfig};

    fn config(n_robots: usize) -> WorldConfig {
        WorldConfig { arena_size: 200.0, cell_size: 5.0, n_robots, sensing_radius: 10.0, ..WorldConfig::default() }
    }

    fn drive(world: &mut WorldState, commands: &[Command], ticks: usize) {
        for _ in 0..ticks {
            world.step(commands, 1.0).unwrap();
        }
    }

    #[test]
    fn accuracy_counts_sensed_targets() {
        let targets: Vec<Point> = (0..50).map(|i| Point::new(2.5 + 4.0 * i as f64, 190.0)).collect();
        let mut w = WorldState::from_parts(config(1), &[(Point::new(100.0, 20.0), 0.0)], &targets, &[]).unwrap();
        assert_eq!(sensing_accuracy(&w), 0.0);
        for t in w.targets.iter_mut().take(41) {
            t.sensed = true;
        }
        assert!((sensing_accuracy(&w) - 0.82).abs() < 1e-15);
        for t in &mut w.targets {
            t.sensed = true;
        }
        assert_eq!(sensing_accuracy(&w), 1.0);
    }

    #[test]
    fn efficiency_of_idle_and_straight_runs() {
        let cfg = config(1);
        let mut w =
            WorldState::from_parts(cfg.clone(), &[(Point::new(12.5, 102.5), 0.0)], &[Point::new(1.0, 1.0)], &[])
                .unwrap();
        assert_eq!(path_efficiency(&w), 0.0);
        drive(&mut w, &[Command { heading: 0.0, speed: 1.5 }], 100);
        let e = path_efficiency(&w);
        // a 20 m wide swath over 150 m of fresh ground, counted in 5 m cells
        assert!(e > 0.85 && e <= 1.0, "{e}");
    }

    #[test]
    fn retraced_paths_are_less_efficient_than_disjoint_ones() {
        let go = [Command { heading: 0.0, speed: 1.5 }; 2];
        let same = [(Point::new(12.5, 102.5), 0.0), (Point::new(12.5, 102.5), 0.0)];
        let apart = [(Point::new(12.5, 52.5), 0.0), (Point::new(12.5, 152.5), 0.0)];
        let run = |poses: &[(Point, f64)]| {
            let mut w = WorldState::from_parts(config(2), poses, &[Point::new(1.0, 1.0)], &[]).unwrap();
            drive(&mut w, &go, 80);
            path_efficiency(&w)
        };
        assert!(run(&same) < run(&apart));
    }

    #[test]
    fn response_time_picks_the_kth_sensing_time() {
        let targets: Vec<Point> = (0..6).map(|i| Point::new(30.0 * i as f64 + 15.0, 100.0)).collect();
        let mut w = WorldState::from_parts(config(1), &[(Point::new(2.5, 2.5), 0.0)], &targets, &[]).unwrap();
        assert!(response_time(&w, 0.5).is_infinite());
        let times = [4.0, 1.0, 9.0, 2.0];
        for (t, at) in w.targets.iter_mut().zip(times) {
            t.sensed = true;
            t.first_sensed_time = Some(at);
        }
        // ceil(0.5 * 6) = 3rd earliest
        assert_eq!(response_time(&w, 0.5), 4.0);
        assert!(response_time(&w, 0.9).is_infinite());
        let m = Metrics::from_world(&w, 0.9, 7);
        assert!(m.censored());
        assert_eq!(m.bytes_transmitted, 7);
    }

    #[test]
    fn targets_under_spawn_footprints_respond_at_zero() {
        let w = WorldState::from_parts(config(1), &[(Point::new(100.0, 100.0), 0.0)], &[Point::new(101.0, 99.0)], &[])
            .unwrap();
        assert_eq!(response_time(&w, 0.9), 0.0);
        assert_eq!(sensing_accuracy(&w), 1.0);
    }
}
