//! Backprop against central finite differences on one small network.
//!
//! cargo run --release --example gradient_check -- [seed]

use lsai::model::{topology, Loss, MlpModel, OutputActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lsai::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = topology(4, &[6, 5], 2)?;
    let model = MlpModel::init_uniform(shapes, OutputActivation::Sigmoid, &mut rng)?;
    let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = [0.2, 0.9];

    let grad = model.backprop(&x, &t, Loss::Mse)?;
    let h = 1e-5;
    for l in 0..model.num_layers() {
        let start = model.params().layer_offset(l);
        let end = start + model.shapes()[l].param_count();
        let mut worst: f64 = 0.0;
        for k in start..end {
            let mut plus = model.clone();
            plus.params_mut().values_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut().values_mut()[k] -= h;
            let num = (Loss::Mse.value(&plus.forward(&x)?, &t) - Loss::Mse.value(&minus.forward(&x)?, &t)) / (2.0 * h);
            worst = worst.max((num - grad.values()[k]).abs());
        }
        println!("layer {l}: {} params, max |analytic - numeric| = {worst:.2e}", end - start);
    }
    Ok(())
}
