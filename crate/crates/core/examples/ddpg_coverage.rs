//! Trains a single robot with DDPG on a small arena and prints how episode
//! coverage evolves.
//!
//! cargo run --release --example ddpg_coverage -- [seed] [episodes]

use lsai::policy::{train_episodes, DdpgConfig, EpisodeSettings};
use lsai::world::WorldConfig;

fn main() -> lsai::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let episodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let settings = EpisodeSettings {
        world: WorldConfig {
            arena_size: 50.0,
            n_robots: 1,
            n_targets: 3,
            sensing_radius: 7.5,
            ..WorldConfig::default()
        },
        episodes,
        ticks: 30,
        dt: 1.0,
        update_every: 2,
    };
    let cfg = DdpgConfig::default();
    let stats = train_episodes(&settings, &cfg, seed)?;
    for chunk in stats.chunks(10).enumerate() {
        let (i, c) = chunk;
        let cov = c.iter().map(|s| s.coverage).sum::<f64>() / c.len() as f64;
        let rew = c.iter().map(|s| s.reward).sum::<f64>() / c.len() as f64;
        println!("episodes {:>3}-{:<3} coverage={cov:.3} reward={rew:.2}", i * 10, i * 10 + c.len() - 1);
    }
    Ok(())
}
