//! One aggregation round: four robots agree on an update direction, a fifth
//! pulls the other way. Prints scores and weights for a few temperatures and
//! how far the result lands from plain averaging.

use lsai::aggregation::{attention_round, fedavg};
use lsai::model::{topology, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lsai::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shapes = topology(3, &[4], 2)?;
    let n = shapes.iter().map(|s| s.param_count()).sum::<usize>();
    let global = ParamVector::zeros(shapes.clone());
    let direction: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut locals = Vec::new();
    for i in 0..5 {
        let sign = if i == 4 { -1.0 } else { 1.0 };
        let v = direction.iter().map(|d| sign * d + rng.gen_range(-0.3..0.3)).collect();
        locals.push(ParamVector::new(shapes.clone(), v)?);
    }
    let uploads: Vec<(u32, &ParamVector)> = locals.iter().enumerate().map(|(i, p)| (i as u32, p)).collect();
    let plain = fedavg(&locals.iter().collect::<Vec<_>>())?;

    for t in [0.1, 0.5, 2.0, 100.0] {
        let round = attention_round(&uploads, &global, t)?;
        let w: Vec<String> = round.weights.weights.iter().map(|(r, w)| format!("{r}:{w:.3}")).collect();
        let gap = round.global.sub(&plain)?.norm();
        println!("temperature {t:>5}: weights [{}]  |attention - fedavg| = {gap:.4}", w.join(" "));
    }
    let scores = attention_round(&uploads, &global, 1.0)?.scores;
    for s in scores {
        println!("robot {} agreement {:+.3}", s.robot_id, s.score);
    }
    Ok(())
}
