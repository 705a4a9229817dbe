//! Splits a large model for one robot at several sparsities and reports the
//! distillation loss before and after masked fine-tuning.

use lsai::model::{topology, MlpModel, OutputActivation, SgdConfig, DEFAULT_HIDDEN};
use lsai::policy::{ACTION_DIM, OBS_DIM};
use lsai::splitting::{distillation_data, mean_loss, split_for_robot, PruneSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lsai::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = topology(OBS_DIM, &DEFAULT_HIDDEN, ACTION_DIM)?;
    let lai = MlpModel::init_uniform(shapes, OutputActivation::Sigmoid, &mut rng)?;
    let inputs: Vec<Vec<f64>> = (0..128).map(|_| (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let data = distillation_data(&lai, &inputs)?;
    let sgd = SgdConfig::new(0.05, 32)?;

    println!("sparsity  zeros/params  loss(no tuning)  loss(40 steps)  bytes");
    for s in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let raw = split_for_robot(&lai, &PruneSchedule::new(1, s, 0)?, &data, 0, &sgd)?.sub;
        let tuned = split_for_robot(&lai, &PruneSchedule::new(2, s, 20)?, &data, 0, &sgd)?.sub;
        println!(
            "{s:>8.1}  {:>5}/{:<6}  {:>15.6}  {:>14.6}  {:>5}",
            tuned.mask.count_zeros(),
            tuned.mask.len(),
            mean_loss(&raw.model, &data)?,
            mean_loss(&tuned.model, &data)?,
            tuned.serialized_len()
        );
    }
    Ok(())
}
