//! Attention-weighted model aggregation at the edge.
//!
//! Each uploaded small model is scored by how well its update direction
//! (`local - global`) agrees with the mean update of all participants
//! (cosine similarity). Scores pass through a temperature softmax and the new
//! global model is the weight-averaged combination of the uploads. Uniform
//! weights reduce this to plain FedAvg, which [`fedavg`] computes directly.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::world::{Point, RobotId};

/// Norms below this count as a zero update.
pub const ZERO_NORM: f64 = 1e-12;

/// Decay of the historical evaluation moving average.
pub const HISTORY_DECAY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionScore {
    pub robot_id: RobotId,
    /// Cosine agreement in `[-1, 1]`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    /// `(robot, weight)` in the order the scores were given.
    pub weights: Vec<(RobotId, f64)>,
    pub temperature: f64,
}

impl AttentionWeights {
    pub fn get(&self, robot: RobotId) -> Option<f64> {
        self.weights.iter().find(|(r, _)| *r == robot).map(|(_, w)| *w)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }
}

/// Per-robot eligibility bookkeeping kept by an edge node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EligibilityRecord {
    pub robot_id: RobotId,
    /// Exponential moving average of past attention scores.
    pub historical_score: f64,
    pub last_known_position: Point,
}

impl EligibilityRecord {
    pub fn new(robot_id: RobotId, position: Point) -> Self {
        Self { robot_id, historical_score: 0.0, last_known_position: position }
    }

    /// Folds a new score into the moving average.
    pub fn observe(&mut self, score: f64) {
        let s = score.clamp(-1.0, 1.0);
        self.historical_score = (HISTORY_DECAY * self.historical_score + (1.0 - HISTORY_DECAY) * s).clamp(-1.0, 1.0);
    }
}

/// Mean of `local_i - global` over all uploads.
pub fn mean_update(locals: &[&ParamVector], global: &ParamVector) -> Result<ParamVector> {
    if locals.is_empty() {
        return Err(Error::invalid("mean update needs at least one model"));
    }
    let mut acc = ParamVector::zeros(global.shapes().to_vec());
    let inv = 1.0 / locals.len() as f64;
    for local in locals {
        local.ensure_same_shape(global, "mean update")?;
        for ((a, l), g) in acc.values_mut().iter_mut().zip(local.values()).zip(global.values()) {
            *a += (l - g) * inv;
        }
    }
    Ok(acc)
}

/// Cosine similarity between `local - global_prev` and `mean_update`; zero
/// when either vector is (numerically) zero.
pub fn attention_score(
    robot_id: RobotId,
    local: &ParamVector,
    global_prev: &ParamVector,
    mean_update: &ParamVector,
) -> Result<AttentionScore> {
    local.ensure_same_shape(global_prev, "attention score")?;
    local.ensure_same_shape(mean_update, "attention score")?;
    let (mut dot, mut nu, mut nm) = (0.0, 0.0, 0.0);
    for ((l, g), m) in local.values().iter().zip(global_prev.values()).zip(mean_update.values()) {
        let u = l - g;
        dot += u * m;
        nu += u * u;
        nm += m * m;
    }
    let (nu, nm) = (nu.sqrt(), nm.sqrt());
    let score = if nu < ZERO_NORM || nm < ZERO_NORM { 0.0 } else { (dot / (nu * nm)).clamp(-1.0, 1.0) };
    Ok(AttentionScore { robot_id, score })
}

/// Temperature softmax over the scores.
pub fn attention_weights(scores: &[AttentionScore], temperature: f64) -> Result<AttentionWeights> {
    if scores.is_empty() {
        return Err(Error::invalid("attention weights need at least one score"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let max = scores.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s.score - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(AttentionWeights {
        weights: scores.iter().zip(&exps).map(|(s, e)| (s.robot_id, e / total)).collect(),
        temperature,
    })
}

/// `sum_i w_i * theta_i`, element-wise.
pub fn aggregate(models: &[(&ParamVector, f64)]) -> Result<ParamVector> {
    let Some((first, _)) = models.first() else {
        return Err(Error::invalid("aggregate needs at least one model"));
    };
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("aggregation weights sum to {total}, expected 1")));
    }
    if let Some((_, w)) = models.iter().find(|(_, w)| !(*w >= 0.0)) {
        return Err(Error::invalid(format!("negative aggregation weight {w}")));
    }
    let mut out = ParamVector::zeros(first.shapes().to_vec());
    for (theta, w) in models {
        theta.ensure_same_shape(first, "aggregate")?;
        for (o, t) in out.values_mut().iter_mut().zip(theta.values()) {
            *o += w * t;
        }
    }
    Ok(out)
}

/// Plain federated averaging: every model weighted `1 / n`.
pub fn fedavg(models: &[&ParamVector]) -> Result<ParamVector> {
    let Some(first) = models.first() else {
        return Err(Error::invalid("fedavg needs at least one model"));
    };
    let w = 1.0 / models.len() as f64;
    let mut out = vec![0.0; first.len()];
    for theta in models {
        theta.ensure_same_shape(first, "fedavg")?;
        for (k, t) in theta.values().iter().enumerate() {
            out[k] += w * t;
        }
    }
    ParamVector::new(first.shapes().to_vec(), out)
}

/// Everything one attention round produces.
#[derive(Clone, Debug)]
pub struct AttentionRound {
    pub global: ParamVector,
    pub scores: Vec<AttentionScore>,
    pub weights: AttentionWeights,
}

/// Scores, weights and aggregates one round of uploads against `global_prev`.
pub fn attention_round(
    uploads: &[(RobotId, &ParamVector)],
    global_prev: &ParamVector,
    temperature: f64,
) -> Result<AttentionRound> {
    let locals: Vec<&ParamVector> = uploads.iter().map(|(_, p)| *p).collect();
    let mean = mean_update(&locals, global_prev)?;
    let scores =
        uploads.iter().map(|(id, p)| attention_score(*id, p, global_prev, &mean)).collect::<Result<Vec<_>>>()?;
    let weights = attention_weights(&scores, temperature)?;
    let pairs: Vec<(&ParamVector, f64)> = locals.iter().copied().zip(weights.weights.iter().map(|(_, w)| *w)).collect();
    let global = aggregate(&pairs)?;
    Ok(AttentionRound { global, scores, weights })
}

/// Robots within `radius` of the edge whose history is at least
/// `min_history`. With fewer than two such robots the history filter is
/// dropped: every robot inside the radius qualifies, and if that still leaves
/// fewer than two, the nearest two robots overall are returned.
/// Equidistant robots are ordered by `rng`.
pub fn select_participants<R: Rng + ?Sized>(
    records: &[EligibilityRecord],
    edge_position: Point,
    radius: f64,
    min_history: f64,
    rng: &mut R,
) -> Result<BTreeSet<RobotId>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("selection radius must be > 0, got {radius}")));
    }
    let strict: BTreeSet<RobotId> = records
        .iter()
        .filter(|r| r.last_known_position.distance(&edge_position) <= radius && r.historical_score >= min_history)
        .map(|r| r.robot_id)
        .collect();
    if strict.len() >= 2 || records.len() < 2 && strict.len() == records.len() {
        return Ok(strict);
    }
    let in_radius: BTreeSet<RobotId> = records
        .iter()
        .filter(|r| r.last_known_position.distance(&edge_position) <= radius)
        .map(|r| r.robot_id)
        .collect();
    if in_radius.len() >= 2 {
        return Ok(in_radius);
    }
    let mut order: Vec<&EligibilityRecord> = records.iter().collect();
    order.shuffle(rng);
    order.sort_by(|a, b| {
        a.last_known_position.distance(&edge_position).total_cmp(&b.last_known_position.distance(&edge_position))
    });
    Ok(order.iter().take(2).map(|r| r.robot_id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerShape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A single `(n-1) -> 1` layer holds exactly n scalars; a scalar model
    /// is a `1 -> 1` layer with a zero bias.
    fn pv(values: &[f64]) -> ParamVector {
        match values.len() {
            1 => ParamVector::new(vec![LayerShape::new(1, 1).unwrap()], vec![values[0], 0.0]).unwrap(),
            n => ParamVector::new(vec![LayerShape::new(n - 1, 1).unwrap()], values.to_vec()).unwrap(),
        }
    }

    fn score(delta: &[f64], mean: &[f64]) -> f64 {
        let global = pv(&vec![0.0; delta.len()]);
        attention_score(0, &pv(delta), &global, &pv(mean)).unwrap().score
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((score(&[3.0, 4.0], &[4.0, 3.0]) - 0.96).abs() < 1e-12);
        assert_eq!(score(&[0.0, 0.0], &[4.0, 3.0]), 0.0);
        assert_eq!(score(&[1.0, 2.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn score_rejects_shape_mismatch() {
        let a = pv(&[1.0, 2.0]);
        let b = pv(&[1.0, 2.0, 3.0]);
        assert!(attention_score(0, &a, &b, &a).is_err());
    }

    fn scores(values: &[f64]) -> Vec<AttentionScore> {
        values.iter().enumerate().map(|(i, s)| AttentionScore { robot_id: i as RobotId, score: *s }).collect()
    }

    #[test]
    fn weight_examples() {
        let w = attention_weights(&scores(&[0.3, 0.3, 0.3, 0.3]), 0.5).unwrap();
        assert!(w.weights.iter().all(|(_, x)| *x == 0.25));
        let w = attention_weights(&scores(&[1.0, 0.0]), 1.0).unwrap();
        assert!((w.weights[0].1 - 0.7311).abs() < 1e-4);
        assert!((w.weights[1].1 - 0.2689).abs() < 1e-4);
        assert!(attention_weights(&[], 1.0).is_err());
        assert!(attention_weights(&scores(&[1.0]), 0.0).is_err());
        assert!(attention_weights(&scores(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = pv(&[1.0, -2.0, 3.5]);
        assert_eq!(aggregate(&[(&a, 1.0)]).unwrap(), a);
        let b = pv(&[3.0, 2.0, 0.5]);
        assert_eq!(aggregate(&[(&a, 0.5), (&b, 0.5)]).unwrap().values(), &[2.0, 0.0, 2.0]);
        let (x, y, z) = (pv(&[2.0]), pv(&[4.0]), pv(&[6.0]));
        let g = aggregate(&[(&x, 0.2), (&y, 0.3), (&z, 0.5)]).unwrap();
        assert!((g.values()[0] - 4.6).abs() < 1e-12);
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[(&a, 0.5), (&pv(&[1.0, 2.0]), 0.5)]).is_err());
        assert!(aggregate(&[(&a, 0.5), (&b, 0.4)]).is_err());
    }

    #[test]
    fn single_upload_is_copied() {
        let g = pv(&[0.0, 0.0, 0.0]);
        let a = pv(&[1.0, 2.0, 3.0]);
        let round = attention_round(&[(4, &a)], &g, 0.5).unwrap();
        assert_eq!(round.weights.weights, vec![(4, 1.0)]);
        assert_eq!(round.global, a);
    }

    #[test]
    fn zero_update_degenerates_to_global() {
        let g = pv(&[0.5, -1.0, 2.0]);
        let uploads = [(0, &g), (1, &g), (2, &g)];
        let round = attention_round(&uploads, &g, 0.5).unwrap();
        assert!(round.scores.iter().all(|s| s.score == 0.0));
        for (a, b) in round.global.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn record(id: RobotId, x: f64, h: f64) -> EligibilityRecord {
        EligibilityRecord { robot_id: id, historical_score: h, last_known_position: Point::new(x, 0.0) }
    }

    #[test]
    fn selection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let edge = Point::new(0.0, 0.0);
        let all: Vec<_> = (0..4).map(|i| record(i, i as f64, 0.0)).collect();
        assert_eq!(select_participants(&all, edge, 10.0, -1.0, &mut rng).unwrap().len(), 4);

        let mut far = all.clone();
        far.push(record(9, 20.0, 0.9));
        let s = select_participants(&far, edge, 10.0, -1.0, &mut rng).unwrap();
        assert!(!s.contains(&9) && s.len() == 4);

        let hist = [0.9, 0.5, 0.1, -0.2, 0.8];
        let recs: Vec<_> = hist.iter().enumerate().map(|(i, h)| record(i as RobotId, 1.0, *h)).collect();
        let s = select_participants(&recs, edge, 10.0, 0.4, &mut rng).unwrap();
        assert_eq!(s, BTreeSet::from([0, 1, 4]));

        assert!(select_participants(&[], edge, 10.0, 0.0, &mut rng).unwrap().is_empty());
        assert!(select_participants(&recs, edge, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn selection_relaxes_to_nearest_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let edge = Point::new(0.0, 0.0);
        let recs = [record(0, 50.0, 0.9), record(1, 30.0, -0.5), record(2, 80.0, -0.5)];
        let s = select_participants(&recs, edge, 10.0, 0.0, &mut rng).unwrap();
        assert_eq!(s, BTreeSet::from([0, 1]));
        let recs = [record(0, 1.0, 0.9), record(1, 2.0, -0.5), record(2, 80.0, -0.5)];
        let s = select_participants(&recs, edge, 10.0, 0.0, &mut rng).unwrap();
        assert_eq!(s, BTreeSet::from([0, 1]));
    }

    #[test]
    fn history_is_an_ema_in_range() {
        let mut r = EligibilityRecord::new(0, Point::default());
        r.observe(1.0);
        assert!((r.historical_score - 0.1).abs() < 1e-15);
        for _ in 0..500 {
            r.observe(1.0);
        }
        assert!(r.historical_score <= 1.0 && r.historical_score > 0.99);
    }

    #[test]
    fn uniform_weights_reproduce_fedavg_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..8 {
            let models: Vec<ParamVector> =
                (0..n).map(|_| pv(&(0..7).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>())).collect();
            let refs: Vec<&ParamVector> = models.iter().collect();
            let w = attention_weights(&scores(&vec![0.123; n]), 0.5).unwrap();
            let pairs: Vec<_> = refs.iter().copied().zip(w.weights.iter().map(|x| x.1)).collect();
            let a = aggregate(&pairs).unwrap();
            let f = fedavg(&refs).unwrap();
            for (x, y) in a.values().iter().zip(f.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_ignores_shifts(
            raw in proptest::collection::vec(-1.0f64..1.0, 1..20),
            shift in -5.0f64..5.0,
            t in 0.05f64..5.0,
        ) {
            let w = attention_weights(&scores(&raw), t).unwrap();
            prop_assert!((w.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(w.weights.iter().all(|(_, x)| *x >= 0.0));
            let shifted: Vec<f64> = raw.iter().map(|s| s + shift).collect();
            let ws = attention_weights(&scores(&shifted), t).unwrap();
            for (a, b) in w.weights.iter().zip(&ws.weights) {
                prop_assert!((a.1 - b.1).abs() <= 1e-12);
            }
        }

        #[test]
        fn higher_score_gets_higher_weight(
            raw in proptest::collection::vec(-1.0f64..1.0, 2..10),
            bump in 1e-3f64..0.5,
        ) {
            let mut s = raw.clone();
            s[0] = s[1] + bump;
            let w = attention_weights(&scores(&s), 0.5).unwrap();
            prop_assert!(w.weights[0].1 > w.weights[1].1);
        }

        #[test]
        fn aggregate_is_a_convex_combination(
            seed in 0u64..500,
            n in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let models: Vec<ParamVector> = (0..n)
                .map(|_| pv(&(0..5).map(|_| rng.gen_range(-10.0..10.0)).collect::<Vec<_>>()))
                .collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = attention_weights(&scores(&raw), 0.5).unwrap();
            let pairs: Vec<_> = models.iter().zip(w.weights.iter().map(|x| x.1)).collect();
            let g = aggregate(&pairs).unwrap();
            for k in 0..5 {
                let lo = models.iter().map(|m| m.values()[k]).fold(f64::INFINITY, f64::min);
                let hi = models.iter().map(|m| m.values()[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(g.values()[k] >= lo - 1e-9 && g.values()[k] <= hi + 1e-9);
            }
        }
    }
}
