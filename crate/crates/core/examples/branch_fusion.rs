//! Attaches a sub-model to a small model at every hidden layer, trains each
//! branch, scores it with a short rollout and keeps the cheapest.

use lsai::fusion::{fuse_update, FusionConfig, Rollout};
use lsai::model::{topology, MlpModel, OutputActivation, DEFAULT_HIDDEN};
use lsai::policy::{observe, ACTION_DIM, OBS_DIM};
use lsai::splitting::{build_mask, distillation_data, SubModel};
use lsai::world::{WorldConfig, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsai::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shapes = topology(OBS_DIM, &DEFAULT_HIDDEN, ACTION_DIM)?;
    let sai = MlpModel::init_uniform(shapes.clone(), OutputActivation::Sigmoid, &mut rng)?;
    let lai = MlpModel::init_uniform(shapes, OutputActivation::Sigmoid, &mut rng)?;
    let sub = SubModel::new(0, lai.clone(), build_mask(lai.params(), 0.5)?)?;

    let world = WorldState::spawn(&WorldConfig { n_robots: 4, ..WorldConfig::default() })?;
    let inputs: Vec<Vec<f64>> = (0..world.robots.len()).map(|i| observe(&world, i).as_slice().to_vec()).collect();
    let data = distillation_data(&lai, &inputs)?;
    let cfg = FusionConfig::default();
    let rollout = Rollout {
        robot: 0,
        steps: cfg.rollout_steps,
        dt: 1.0,
        alpha: cfg.alpha,
        beta: cfg.beta,
        noise_sigma: cfg.eval_noise,
        seed: 1,
    };
    let out = fuse_update(&sai, &sub, &data, &world, &rollout, &cfg)?;
    for c in &out.candidates {
        println!(
            "branch at layer {}: energy {:.2} J, collisions {}, objective {:.2}",
            c.branch.r, c.objective.energy_used, c.objective.collision_count, c.objective.value
        );
    }
    println!("selected layer {}", out.fused.branch.r);
    Ok(())
}
