//! Drives robots on fixed headings through an arena and prints coverage,
//! sensed targets, footprint overlap and energy as the clock advances.

use lsai::experiment::{path_efficiency, sensing_accuracy};
use lsai::world::{jaccard, Command, WorldConfig, WorldState};

fn main() -> lsai::Result<()> {
    let cfg = WorldConfig { n_robots: 4, n_targets: 12, obstacle_fraction: 0.05, seed: 2, ..WorldConfig::default() };
    let mut world = WorldState::spawn(&cfg)?;
    let commands: Vec<Command> = (0..cfg.n_robots)
        .map(|i| Command { heading: i as f64 * std::f64::consts::FRAC_PI_2, speed: cfg.max_speed })
        .collect();
    for tick in 1..=120 {
        world.step(&commands, 1.0)?;
        if tick % 20 == 0 {
            let overlap = jaccard(&world.robots[0].footprint, &world.robots[1].footprint);
            let energy: f64 = world.robots.iter().map(|r| r.energy_spent).sum();
            println!(
                "t={:>4}s covered={:>4}/{} sensed={}/{} accuracy={:.2} efficiency={:.3} overlap01={overlap:.2} energy={energy:.0}J collisions={}",
                world.clock,
                world.covered_cells(),
                cfg.cell_count(),
                world.sensed_count(),
                world.targets.len(),
                sensing_accuracy(&world),
                path_efficiency(&world),
                world.collision_log.len()
            );
        }
    }
    Ok(())
}
