//! Fusion of a robot's small model with its split large-model sub-model.
//!
//! The small model is viewed as a chain of layers. A branch at position `r`
//! projects the sub-model's hidden activation at layer `r` through a
//! learnable affine map and adds it to the small model's pre-activation at
//! the same layer. The branch with the lowest energy-plus-collision
//! objective in a simulated rollout is kept.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerShape, Loss, MlpModel, ParamVector, SgdConfig};
use crate::policy::{act, ddpg_update, observe, Actor, DdpgConfig, ReplayBuffer};
use crate::splitting::{Sample, SubModel};
use crate::world::{Command, WorldState};

/// Layer chain of a model and the positions where a branch may attach.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub layers: Vec<LayerShape>,
    /// Hidden-layer positions `1..L-1`.
    pub injection_points: Vec<usize>,
}

impl ModelGraph {
    pub fn of(model: &MlpModel) -> Self {
        let layers = model.shapes().to_vec();
        let injection_points = (1..layers.len()).collect();
        Self { layers, injection_points }
    }

    /// Width of hidden layer `r`.
    pub fn width(&self, r: usize) -> usize {
        self.layers[r - 1].output_dim
    }
}

/// How the projected sub-model features combine with the base layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineOp {
    Sum,
}

/// One candidate attachment: position `r` and the affine map `g^r`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBranch {
    pub r: usize,
    /// A single `sub width -> base width` layer.
    pub transform: ParamVector,
    pub combine: CombineOp,
}

impl FusionBranch {
    pub fn zero(r: usize, sub_width: usize, base_width: usize) -> Result<Self> {
        Ok(Self {
            r,
            transform: ParamVector::zeros(vec![LayerShape::new(sub_width, base_width)?]),
            combine: CombineOp::Sum,
        })
    }

    pub fn shape(&self) -> LayerShape {
        self.transform.shapes()[0]
    }

    /// `G h + b`.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        let s = self.shape();
        let w = self.transform.weights(0);
        let b = self.transform.bias(0);
        (0..s.output_dim)
            .map(|o| b[o] + w[o * s.input_dim..(o + 1) * s.input_dim].iter().zip(h).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    /// Branch position as a `u16` followed by the transform's bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.transform.len() * 8 + 16);
        out.extend_from_slice(&(self.r as u16).to_le_bytes());
        out.extend_from_slice(&self.transform.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 {
            return Err(Error::Decode("branch record shorter than its header".into()));
        }
        let r = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        let transform = ParamVector::from_bytes(&bytes[2..])?;
        if transform.shapes().len() != 1 {
            return Err(Error::Decode("branch transform must be a single layer".into()));
        }
        Ok(Self { r, transform, combine: CombineOp::Sum })
    }
}

/// Small model with a sub-model branch attached.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedModel {
    pub base: MlpModel,
    pub sub: SubModel,
    pub branch: FusionBranch,
}

impl FusedModel {
    pub fn new(base: MlpModel, sub: SubModel, branch: FusionBranch) -> Result<Self> {
        if base.input_dim() != sub.model.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "fusion input",
                expected: base.input_dim(),
                actual: sub.model.input_dim(),
            });
        }
        let r = branch.r;
        if r == 0 || r >= base.num_layers() || r >= sub.model.num_layers() {
            return Err(Error::invalid(format!("branch position {r} is not a shared hidden layer")));
        }
        let s = branch.shape();
        let (sub_w, base_w) = (sub.model.shapes()[r - 1].output_dim, base.shapes()[r - 1].output_dim);
        if s.input_dim != sub_w || s.output_dim != base_w {
            return Err(Error::invalid(format!(
                "branch transform is {}x{} but layer {r} needs {sub_w}x{base_w}",
                s.input_dim, s.output_dim
            )));
        }
        Ok(Self { base, sub, branch })
    }

    /// The injected vector `g^r(h_r^sub)` for `input`.
    fn injection(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let sub_trace = self.sub.model.trace(input)?;
        let h = sub_trace.activations[self.branch.r].clone();
        let inj = self.branch.project(&h);
        Ok((h, inj))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let (_, inj) = self.injection(input)?;
        let mut t = self.base.trace_injected(input, Some((self.branch.r, &inj)))?;
        Ok(t.activations.pop().expect("non-empty trace"))
    }
}

impl Actor for FusedModel {
    fn act_raw(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.forward(obs)
    }

    /// Gradient with respect to the base model; the sub-model and the branch
    /// transform are held fixed.
    fn accumulate_gradient(&self, obs: &[f64], d_action: &[f64], acc: &mut [f64]) -> Result<()> {
        let (_, inj) = self.injection(obs)?;
        let trace = self.base.trace_injected(obs, Some((self.branch.r, &inj)))?;
        self.base.backward_accumulate(&trace, d_action, acc, false)?;
        Ok(())
    }

    fn trainable(&self) -> &ParamVector {
        self.base.params()
    }

    fn trainable_mut(&mut self) -> &mut ParamVector {
        self.base.params_mut()
    }
}

/// One zero-initialised branch per shared hidden layer.
pub fn enumerate_branches(sai: &MlpModel, sub: &SubModel) -> Result<Vec<FusionBranch>> {
    if sai.input_dim() != sub.model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "fusion input",
            expected: sai.input_dim(),
            actual: sub.model.input_dim(),
        });
    }
    let shared = sai.num_layers().min(sub.model.num_layers());
    (1..shared)
        .map(|r| FusionBranch::zero(r, sub.model.shapes()[r - 1].output_dim, sai.shapes()[r - 1].output_dim))
        .collect()
}

/// Minibatch SGD on the branch transform only, against `dataset` targets.
/// Batches walk the dataset cyclically.
pub fn train_branch(fused: &FusedModel, dataset: &[Sample], steps: usize, cfg: &SgdConfig) -> Result<FusionBranch> {
    let mut branch = fused.branch.clone();
    if steps == 0 {
        return Ok(branch);
    }
    if dataset.is_empty() {
        return Err(Error::invalid("branch training needs data when steps > 0"));
    }
    for (x, t) in dataset {
        if x.len() != fused.base.input_dim() || t.len() != fused.base.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "branch training sample",
                expected: fused.base.input_dim() + fused.base.output_dim(),
                actual: x.len() + t.len(),
            });
        }
    }
    // sub-model features do not change during training
    let features: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(x, _)| Ok(fused.sub.model.trace(x)?.activations[branch.r].clone()))
        .collect::<Result<_>>()?;
    let r = branch.r;
    let s = branch.shape();
    let batch = cfg.batch_size.min(dataset.len());
    let mut cursor = 0;
    let mut scratch = vec![0.0; fused.base.params().len()];
    let mut grad = vec![0.0; branch.transform.len()];
    for _ in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..batch {
            let (x, t) = &dataset[cursor];
            let h = &features[cursor];
            cursor = (cursor + 1) % dataset.len();
            let inj = branch.project(h);
            let trace = fused.base.trace_injected(x, Some((r, &inj)))?;
            let d_out = Loss::Mse.gradient(trace.output(), t);
            let (_, deltas) = fused.base.backward_accumulate(&trace, &d_out, &mut scratch, true)?;
            // the injection enters the pre-activation of weight layer r-1
            let delta = &deltas[r - 1];
            let (gw, gb) = grad.split_at_mut(s.input_dim * s.output_dim);
            for o in 0..s.output_dim {
                for (g, hi) in gw[o * s.input_dim..(o + 1) * s.input_dim].iter_mut().zip(h) {
                    *g += delta[o] * hi;
                }
                gb[o] += delta[o];
            }
        }
        let step = cfg.learning_rate / batch as f64;
        for (p, g) in branch.transform.values_mut().iter_mut().zip(&grad) {
            *p -= step * g;
        }
        if !branch.transform.all_finite() {
            return Err(Error::NonFinite { layer: r - 1 });
        }
    }
    Ok(branch)
}

/// Energy and collisions of one rollout, combined as `alpha * energy + beta * collisions`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchObjective {
    pub energy_used: f64,
    pub collision_count: usize,
    pub value: f64,
}

/// Rollout settings for branch evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rollout {
    pub robot: usize,
    pub steps: usize,
    pub dt: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Exploration noise on the evaluated actor; 0 for a deterministic rollout.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Drives robot `rollout.robot` with `actor` in a copy of `world` while the
/// other robots hold position, and scores the result.
pub fn evaluate_policy<A: Actor>(actor: &A, world: &WorldState, rollout: &Rollout) -> Result<BranchObjective> {
    if rollout.steps == 0 {
        return Err(Error::invalid("rollout needs at least one step"));
    }
    if rollout.robot >= world.robots.len() {
        return Err(Error::invalid(format!("no robot {} in the world", rollout.robot)));
    }
    let mut sim = world.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rollout.seed);
    let mut energy = 0.0;
    let mut collisions = 0;
    let mut commands = vec![Command::HOLD; sim.robots.len()];
    for _ in 0..rollout.steps {
        let obs = observe(&sim, rollout.robot);
        commands[rollout.robot] = act(actor, &obs, rollout.noise_sigma, &mut rng)?.to_command(&sim, rollout.robot);
        let before = sim.collision_log.len();
        let deltas = sim.step(&commands, rollout.dt)?;
        energy += deltas[rollout.robot].energy_spent;
        let id = sim.robots[rollout.robot].id;
        collisions += sim.collision_log[before..].iter().filter(|c| c.a == id || c.b == id).count();
    }
    let value = rollout.alpha * energy + rollout.beta * collisions as f64;
    Ok(BranchObjective { energy_used: energy, collision_count: collisions, value })
}

pub fn evaluate_branch(fused: &FusedModel, world: &WorldState, rollout: &Rollout) -> Result<BranchObjective> {
    evaluate_policy(fused, world, rollout)
}

/// Fusion settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub branch_train_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rollout_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eval_noise: f64,
    /// Robots an edge can fuse per round before falling back to retraining.
    pub fusion_capacity: usize,
    /// Edge compute time per fused robot, seconds.
    pub per_robot_seconds: f64,
    /// Deadline for all fusion work in a round, seconds.
    pub deadline_s: f64,
    /// Fallback retraining budget as a fraction of the episode budget.
    pub fallback_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            branch_train_steps: 50,
            learning_rate: 0.05,
            batch_size: 16,
            rollout_steps: 20,
            alpha: 1.0,
            beta: 10.0,
            eval_noise: 0.0,
            fusion_capacity: 16,
            per_robot_seconds: 0.5,
            deadline_s: 10.0,
            fallback_fraction: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("fusion.learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("fusion.batch_size", "must be >= 1"));
        }
        if self.rollout_steps == 0 {
            return Err(Error::config("fusion.rollout_steps", "must be >= 1"));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::config("fusion.alpha", "objective weights must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.fallback_fraction) {
            return Err(Error::config("fusion.fallback_fraction", "must be in [0, 1]"));
        }
        if !(self.per_robot_seconds >= 0.0 && self.deadline_s >= 0.0) {
            return Err(Error::config("fusion.deadline_s", "times must be >= 0"));
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.learning_rate, batch_size: self.batch_size }
    }

    /// Modeled edge time to fuse `robots` robots.
    pub fn fusion_elapsed(&self, robots: usize) -> f64 {
        self.per_robot_seconds * robots as f64
    }

    /// Fallback budget in DDPG updates for a given episode budget.
    pub fn fallback_iterations(&self, episodes: usize) -> usize {
        ((episodes as f64 * self.fallback_fraction).round() as usize).max(1)
    }
}

/// Each branch's trained transform and its score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBranch {
    pub branch: FusionBranch,
    pub objective: BranchObjective,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutcome {
    pub fused: FusedModel,
    pub candidates: Vec<ScoredBranch>,
}

/// Index of the smallest value; ties keep the earlier (smaller `r`) entry.
pub fn argmin_branch(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Trains every branch on `dataset`, evaluates each with `rollout`, and
/// returns the fused model with the lowest objective.
pub fn fuse_update(
    sai: &MlpModel,
    sub: &SubModel,
    dataset: &[Sample],
    world: &WorldState,
    rollout: &Rollout,
    cfg: &FusionConfig,
) -> Result<FusionOutcome> {
    let branches = enumerate_branches(sai, sub)?;
    if branches.is_empty() {
        return Err(Error::invalid("models have no shared hidden layer to fuse at"));
    }
    let steps = if dataset.is_empty() { 0 } else { cfg.branch_train_steps };
    let mut candidates = Vec::with_capacity(branches.len());
    for b in branches {
        let zero = FusedModel::new(sai.clone(), sub.clone(), b)?;
        let trained = train_branch(&zero, dataset, steps, &cfg.sgd())?;
        let fused = FusedModel { branch: trained, ..zero };
        let objective = evaluate_branch(&fused, world, rollout)?;
        candidates.push(ScoredBranch { branch: fused.branch, objective });
    }
    let values: Vec<f64> = candidates.iter().map(|c| c.objective.value).collect();
    let best = argmin_branch(&values).expect("at least one branch");
    let fused = FusedModel::new(sai.clone(), sub.clone(), candidates[best].branch.clone())?;
    Ok(FusionOutcome { fused, candidates })
}

/// True when the edge cannot fuse this round: too many robots or the
/// modeled fusion time overruns the deadline.
pub fn fallback_triggered(robots_at_edge: usize, fusion_capacity: usize, fusion_elapsed: f64, deadline: f64) -> bool {
    robots_at_edge > fusion_capacity || fusion_elapsed > deadline
}

/// Continues DDPG training of `actor` on the robot's own replay data for
/// `iterations` minibatch updates. The critic is trained alongside and
/// returned so the robot can keep using it.
pub fn fallback_retrain(
    actor: &MlpModel,
    critic: &MlpModel,
    buffer: &ReplayBuffer,
    iterations: usize,
    cfg: &DdpgConfig,
    seed: u64,
) -> Result<(MlpModel, MlpModel)> {
    if iterations == 0 {
        return Err(Error::invalid("fallback retraining needs at least one iteration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut c) = (actor.clone(), critic.clone());
    let (mut ta, mut tc) = (actor.clone(), critic.clone());
    let batch = cfg.batch_size.min(buffer.len());
    if batch == 0 {
        return Ok((a, c));
    }
    for _ in 0..iterations {
        let sample = buffer.sample(batch, &mut rng).expect("batch fits the buffer");
        ddpg_update(&mut a, &mut c, &mut ta, &mut tc, &sample, cfg)?;
    }
    Ok((a, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{topology, OutputActivation, DEFAULT_HIDDEN};
    use crate::policy::{Transition, ACTION_DIM, OBS_DIM};
    use crate::splitting::{build_mask_scoped, distillation_data, PruneScope, SparsityMask};
    use crate::world::{Point, WorldConfig};
    use rand::Rng;

    fn actor(seed: u64, hidden: &[usize]) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpModel::init_uniform(topology(OBS_DIM, hidden, ACTION_DIM).unwrap(), OutputActivation::Sigmoid, &mut rng)
            .unwrap()
    }

    fn sub_of(m: &MlpModel, s: f64) -> SubModel {
        let mask = build_mask_scoped(m.params(), s, PruneScope::WeightsOnly).unwrap();
        SubModel::new(0, m.clone(), mask).unwrap()
    }

    fn world(n: usize, seed: u64) -> WorldState {
        WorldState::spawn(&WorldConfig { arena_size: 100.0, n_robots: n, n_targets: 3, seed, ..WorldConfig::default() })
            .unwrap()
    }

    fn inputs(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn rollout(robot: usize) -> Rollout {
        Rollout { robot, steps: 20, dt: 1.0, alpha: 1.0, beta: 10.0, noise_sigma: 0.0, seed: 0 }
    }

    #[test]
    fn branch_counts_follow_hidden_layers() {
        let sai = actor(1, &DEFAULT_HIDDEN);
        let lai = actor(2, &DEFAULT_HIDDEN);
        assert_eq!(enumerate_branches(&sai, &sub_of(&lai, 0.5)).unwrap().len(), 3);
        assert_eq!(ModelGraph::of(&sai).injection_points, vec![1, 2, 3]);
        let toy = actor(3, &[8]);
        assert_eq!(enumerate_branches(&toy, &sub_of(&toy, 0.2)).unwrap().len(), 1);
    }

    #[test]
    fn enumerate_rejects_input_mismatch() {
        let sai = actor(1, &[8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let other = MlpModel::init_uniform(topology(5, &[8], 2).unwrap(), OutputActivation::Sigmoid, &mut rng).unwrap();
        let sub = SubModel::new(0, other.clone(), SparsityMask::dense(other.params().len())).unwrap();
        assert!(enumerate_branches(&sai, &sub).is_err());
    }

    #[test]
    fn zero_transform_is_bit_exact_identity() {
        let sai = actor(4, &DEFAULT_HIDDEN);
        let sub = sub_of(&actor(5, &DEFAULT_HIDDEN), 0.6);
        for b in enumerate_branches(&sai, &sub).unwrap() {
            let f = FusedModel::new(sai.clone(), sub.clone(), b).unwrap();
            for x in inputs(6, 100) {
                assert_eq!(f.forward(&x).unwrap(), sai.forward(&x).unwrap());
            }
        }
    }

    #[test]
    fn train_branch_zero_steps_and_freeze_contract() {
        let sai = actor(7, &[8, 8]);
        let lai = actor(8, &[8, 8]);
        let sub = sub_of(&lai, 0.3);
        let data = distillation_data(&lai, &inputs(9, 16)).unwrap();
        let b = enumerate_branches(&sai, &sub).unwrap().remove(1);
        let f = FusedModel::new(sai.clone(), sub.clone(), b.clone()).unwrap();
        let cfg = SgdConfig::new(0.5, 8).unwrap();
        assert_eq!(train_branch(&f, &data, 0, &cfg).unwrap(), b);
        let trained = train_branch(&f, &data, 30, &cfg).unwrap();
        assert_ne!(trained, b);
        assert_eq!(f.base, sai);
        assert_eq!(f.sub, sub);
    }

    #[test]
    fn scalar_branch_step_matches_closed_form() {
        // base: x -> sigmoid(w1 x + b1 + g h) -> w2 a + b2 (identity); sub: h = sigmoid(v x + c)
        let (w1, b1, w2, b2) = (0.4, 0.1, 0.7, -0.2);
        let (v, c) = (-0.3, 0.2);
        let base = MlpModel::new(
            ParamVector::new(
                vec![LayerShape::new(1, 1).unwrap(), LayerShape::new(1, 1).unwrap()],
                vec![w1, b1, w2, b2],
            )
            .unwrap(),
            OutputActivation::Identity,
        )
        .unwrap();
        let sub_model = MlpModel::new(
            ParamVector::new(
                vec![LayerShape::new(1, 1).unwrap(), LayerShape::new(1, 1).unwrap()],
                vec![v, c, 1.0, 0.0],
            )
            .unwrap(),
            OutputActivation::Identity,
        )
        .unwrap();
        let sub = SubModel::new(0, sub_model, SparsityMask::dense(4)).unwrap();
        let mut branch = FusionBranch::zero(1, 1, 1).unwrap();
        branch.transform.values_mut()[0] = 0.5;
        let f = FusedModel::new(base, sub, branch).unwrap();
        let (x, t, lr) = (2.0, 1.0, 0.1);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let h = sig(v * x + c);
        let a = sig(w1 * x + b1 + 0.5 * h);
        let y = w2 * a + b2;
        let dg = (y - t) * w2 * a * (1.0 - a) * h;
        let db = (y - t) * w2 * a * (1.0 - a);
        let out = train_branch(&f, &[(vec![x], vec![t])], 1, &SgdConfig::new(lr, 1).unwrap()).unwrap();
        assert!((out.transform.values()[0] - (0.5 - lr * dg)).abs() < 1e-12);
        assert!((out.transform.values()[1] - (0.0 - lr * db)).abs() < 1e-12);
    }

    #[test]
    fn branch_gradient_matches_finite_differences() {
        let sai = actor(10, &[6, 5, 4]);
        let lai = actor(11, &[6, 5, 4]);
        let sub = sub_of(&lai, 0.4);
        let data = vec![(inputs(12, 1).remove(0), vec![0.8, 0.3])];
        for r in 1..=3 {
            let mut b = enumerate_branches(&sai, &sub).unwrap().remove(r - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
            for v in b.transform.values_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
            let f = FusedModel::new(sai.clone(), sub.clone(), b.clone()).unwrap();
            let lr = 1.0;
            let stepped = train_branch(&f, &data, 1, &SgdConfig::new(lr, 1).unwrap()).unwrap();
            let loss = |br: &FusionBranch| {
                let ff = FusedModel::new(sai.clone(), sub.clone(), br.clone()).unwrap();
                Loss::Mse.value(&ff.forward(&data[0].0).unwrap(), &data[0].1)
            };
            for k in 0..b.transform.len() {
                let grad = (b.transform.values()[k] - stepped.transform.values()[k]) / lr;
                let h = 1e-5;
                let mut p = b.clone();
                p.transform.values_mut()[k] += h;
                let mut m = b.clone();
                m.transform.values_mut()[k] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let scale = grad.abs().max(fd.abs()).max(1e-8);
                assert!((grad - fd).abs() / scale < 1e-4 || (grad - fd).abs() < 1e-10, "r={r} k={k}: {grad} vs {fd}");
            }
        }
    }

    #[test]
    fn stationary_policy_costs_only_idle_energy() {
        let mut sai = actor(13, &[4]);
        // saturate the speed output low
        let l = sai.num_layers() - 1;
        let off = sai.params().layer_offset(l) + sai.shapes()[l].input_dim * sai.shapes()[l].output_dim;
        sai.params_mut().values_mut()[off + 1] = -1000.0;
        let w = world(3, 1);
        let r = Rollout { beta: 0.0, alpha: 2.0, ..rollout(0) };
        let obj = evaluate_policy(&sai, &w, &r).unwrap();
        assert!((obj.value - 2.0 * w.config.idle_power * 20.0).abs() < 1e-9);
    }

    #[test]
    fn lone_robot_without_energy_weight_scores_zero() {
        let sai = actor(14, &[4]);
        let w = world(1, 2);
        let r = Rollout { alpha: 0.0, ..rollout(0) };
        assert_eq!(evaluate_policy(&sai, &w, &r).unwrap().value, 0.0);
    }

    #[test]
    fn evaluation_is_deterministic_under_noise() {
        let sai = actor(15, &[8]);
        let w = world(4, 3);
        let r = Rollout { noise_sigma: 0.2, seed: 11, ..rollout(1) };
        let a = evaluate_policy(&sai, &w, &r).unwrap();
        let b = evaluate_policy(&sai, &w, &r).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn collisions_are_counted_for_the_driven_robot() {
        let cfg = WorldConfig { arena_size: 100.0, n_robots: 2, n_targets: 1, ..WorldConfig::default() };
        let w = WorldState::from_parts(
            cfg,
            &[(Point::new(50.0, 50.0), 0.0), (Point::new(51.0, 50.0), 0.0)],
            &[Point::new(5.0, 5.0)],
            &[],
        )
        .unwrap();
        let sai = actor(16, &[4]);
        let obj = evaluate_policy(&sai, &w, &Rollout { steps: 1, ..rollout(0) }).unwrap();
        assert!(obj.collision_count >= 1);
        assert_eq!(obj.value, obj.energy_used + 10.0 * obj.collision_count as f64);
    }

    #[test]
    fn argmin_prefers_lower_value_then_smaller_r() {
        assert_eq!(argmin_branch(&[3.0, 5.0]), Some(0));
        assert_eq!(argmin_branch(&[5.0, 3.0]), Some(1));
        assert_eq!(argmin_branch(&[2.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmin_branch(&[]), None);
    }

    #[test]
    fn fuse_update_picks_brute_force_argmin_and_freezes_inputs() {
        for seed in 0..3 {
            let sai = actor(100 + seed, &DEFAULT_HIDDEN);
            let lai = actor(200 + seed, &DEFAULT_HIDDEN);
            let sub = sub_of(&lai, 0.5);
            let data = distillation_data(&lai, &inputs(seed, 24)).unwrap();
            let w = world(4, seed);
            let cfg = FusionConfig { branch_train_steps: 10, ..FusionConfig::default() };
            let (sai0, sub0) = (sai.clone(), sub.clone());
            let out = fuse_update(&sai, &sub, &data, &w, &rollout(2), &cfg).unwrap();
            assert_eq!((sai, sub.clone()), (sai0, sub0));
            let mut values = Vec::new();
            for c in &out.candidates {
                let f = FusedModel::new(out.fused.base.clone(), sub.clone(), c.branch.clone()).unwrap();
                values.push(evaluate_branch(&f, &w, &rollout(2)).unwrap().value);
            }
            let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let chosen = values.iter().position(|v| *v == best).unwrap();
            assert_eq!(out.fused.branch.r, out.candidates[chosen].branch.r);
        }
    }

    #[test]
    fn single_branch_is_selected() {
        let sai = actor(17, &[8]);
        let sub = sub_of(&actor(18, &[8]), 0.3);
        let out = fuse_update(&sai, &sub, &[], &world(2, 4), &rollout(0), &FusionConfig::default()).unwrap();
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.fused.branch.r, 1);
    }

    #[test]
    fn fallback_predicate_and_budget() {
        assert!(!fallback_triggered(8, 16, 4.0, 10.0));
        assert!(fallback_triggered(17, 16, 4.0, 10.0));
        assert!(fallback_triggered(8, 16, 10.5, 10.0));
        assert!(!fallback_triggered(16, 16, 10.0, 10.0));
        let cfg = FusionConfig::default();
        assert_eq!(cfg.fallback_iterations(300), 30);
        assert_eq!(cfg.fusion_elapsed(8), 4.0);
    }

    #[test]
    fn fallback_retrain_yields_deterministic_valid_model() {
        let cfg = DdpgConfig { batch_size: 8, hidden: vec![8], critic_hidden: vec![8], ..DdpgConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = cfg.new_actor(&mut rng).unwrap();
        let c = cfg.new_critic(&mut rng).unwrap();
        let mut buf = ReplayBuffer::new(100).unwrap();
        for (i, x) in inputs(3, 20).into_iter().enumerate() {
            buf.push(Transition {
                obs: x.clone(),
                action: vec![0.5, 0.5],
                reward: i as f64 * 0.1,
                next_obs: x,
                done: false,
            });
        }
        let (a1, _) = fallback_retrain(&a, &c, &buf, 5, &cfg, 9).unwrap();
        let (a2, _) = fallback_retrain(&a, &c, &buf, 5, &cfg, 9).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, a);
        let x = inputs(4, 1).remove(0);
        assert_eq!(a1.forward(&x).unwrap(), a1.forward(&x).unwrap());
        assert!(a1.forward(&x).unwrap().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(fallback_retrain(&a, &c, &buf, 0, &cfg, 9).is_err());
    }

    #[test]
    fn branch_bytes_round_trip() {
        let mut b = FusionBranch::zero(2, 64, 64).unwrap();
        b.transform.values_mut()[5] = 0.25;
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), 2 + crate::model::serialized_len(b.transform.shapes()));
        assert_eq!(FusionBranch::from_bytes(&bytes).unwrap(), b);
        assert!(FusionBranch::from_bytes(&bytes[..1]).is_err());
    }
}
