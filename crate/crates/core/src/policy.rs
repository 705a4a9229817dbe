//! Actor-critic (DDPG) training of the robots' small path-planning models.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{topology, Loss, MlpModel, OutputActivation, ParamVector, DEFAULT_HIDDEN};
use crate::world::{footprint, wrap_angle, Command, RobotDelta, WorldConfig, WorldState};

/// Neighbours included in an observation.
pub const NEIGHBORS: usize = 3;
pub const OBS_DIM: usize = 2 + 1 + 2 * NEIGHBORS + 2 + 1;
pub const ACTION_DIM: usize = 2;

/// Actions are kept strictly inside `(0, 1)`.
const ACTION_EPS: f64 = 1e-6;

/// What a robot knows about itself, its neighbours and the nearest
/// unexplored region. Every component lies in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
    }
}

/// Builds robot `index`'s observation from the world.
pub fn observe(world: &WorldState, index: usize) -> Observation {
    let cfg = &world.config;
    let a = cfg.arena_size;
    let me = &world.robots[index];
    let p = me.position;
    let mut o = [0.0; OBS_DIM];
    o[0] = 2.0 * p.x / a - 1.0;
    o[1] = 2.0 * p.y / a - 1.0;
    o[2] = (me.energy / cfg.initial_energy).clamp(0.0, 1.0);

    let mut others: Vec<(f64, f64, f64)> = world
        .robots
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != index)
        .map(|(_, r)| (r.position.distance(&p), r.position.x - p.x, r.position.y - p.y))
        .collect();
    others.sort_by(|x, y| x.0.total_cmp(&y.0));
    for (k, (_, dx, dy)) in others.iter().take(NEIGHBORS).enumerate() {
        o[3 + 2 * k] = dx / a;
        o[4 + 2 * k] = dy / a;
    }

    if let Some(f) = world.nearest_frontier(p) {
        let (dx, dy) = (f.x - p.x, f.y - p.y);
        o[9] = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) / std::f64::consts::PI };
        o[10] = (dx.hypot(dy) / (a * std::f64::consts::SQRT_2)).min(1.0);
    }

    let local = footprint(p, cfg.sensing_radius, cfg);
    if !local.is_empty() {
        let covered = local.as_slice().iter().filter(|c| world.coverage[**c]).count();
        o[11] = covered as f64 / local.len() as f64;
    }
    for v in &mut o {
        *v = v.clamp(-1.0, 1.0);
    }
    Observation(o)
}

/// Actor output: a heading code and a speed fraction, both in `(0, 1)`.
///
/// The heading is a steering offset from the bearing of the nearest
/// unexplored region: `0.5` steers straight at it, `0` and `1` turn a
/// quarter circle to either side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub heading: f64,
    pub speed_fraction: f64,
}

impl Action {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != ACTION_DIM {
            return Err(Error::DimensionMismatch { context: "action", expected: ACTION_DIM, actual: v.len() });
        }
        Ok(Self {
            heading: v[0].clamp(ACTION_EPS, 1.0 - ACTION_EPS),
            speed_fraction: v[1].clamp(ACTION_EPS, 1.0 - ACTION_EPS),
        })
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.heading, self.speed_fraction]
    }

    /// Speed fraction rescaled from the clamped range to `[0, 1]`, so a
    /// saturated-low output stops the robot exactly.
    pub fn speed_scale(self) -> f64 {
        ((self.speed_fraction - ACTION_EPS) / (1.0 - 2.0 * ACTION_EPS)).clamp(0.0, 1.0)
    }

    /// Motion command for robot `index` in `world`.
    pub fn to_command(self, world: &WorldState, index: usize) -> Command {
        let p = world.robots[index].position;
        let reference = world.nearest_frontier(p).map(|f| (f.y - p.y).atan2(f.x - p.x)).unwrap_or(0.0);
        Command {
            heading: wrap_angle(reference + (self.heading - 0.5) * std::f64::consts::PI),
            speed: self.speed_scale() * world.config.max_speed,
        }
    }
}

/// Something that maps observations to actions and can be trained along an
/// action gradient.
pub trait Actor {
    fn act_raw(&self, obs: &[f64]) -> Result<Vec<f64>>;

    /// Adds `d_action`'s pull-back onto the trainable parameters into `acc`.
    fn accumulate_gradient(&self, obs: &[f64], d_action: &[f64], acc: &mut [f64]) -> Result<()>;

    fn trainable(&self) -> &ParamVector;

    fn trainable_mut(&mut self) -> &mut ParamVector;
}

impl Actor for MlpModel {
    fn act_raw(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.forward(obs)
    }

    fn accumulate_gradient(&self, obs: &[f64], d_action: &[f64], acc: &mut [f64]) -> Result<()> {
        let trace = self.trace(obs)?;
        self.backward_accumulate(&trace, d_action, acc, false)?;
        Ok(())
    }

    fn trainable(&self) -> &ParamVector {
        self.params()
    }

    fn trainable_mut(&mut self) -> &mut ParamVector {
        self.params_mut()
    }
}

/// Deterministic actor output plus Gaussian noise of scale `noise_sigma`.
pub fn act<A: Actor + ?Sized, R: Rng + ?Sized>(
    actor: &A,
    obs: &Observation,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Action> {
    let mut out = actor.act_raw(obs.as_slice())?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    Action::from_slice(&out)
}

/// One stored step of experience.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO experience store.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be >= 1"));
        }
        Ok(Self { capacity, items: VecDeque::with_capacity(capacity.min(4096)) })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// The most recent `n` transitions, oldest first.
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &Transition> {
        self.items.iter().skip(self.items.len().saturating_sub(n))
    }

    /// `batch` distinct transitions chosen uniformly, or `None` when the
    /// buffer holds fewer than `batch`.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(index::sample(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect())
    }
}

/// Weights of the sensing reward terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub coverage: f64,
    pub energy: f64,
    pub collision: f64,
    pub overlap: f64,
    pub overlap_threshold: f64,
    /// Joules that count as one unit of energy in the reward; raw joules
    /// when unset. See [`RewardWeights::for_world`].
    pub energy_unit: Option<f64>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { coverage: 1.0, energy: 0.5, collision: 5.0, overlap: 2.0, overlap_threshold: 0.2, energy_unit: None }
    }
}

impl RewardWeights {
    /// Energy measured in units of the energy needed to drive across one
    /// cell at full speed, so coverage and energy are both counted in cells.
    pub fn world_energy_unit(world: &WorldConfig) -> f64 {
        world.cell_size * (world.move_energy + world.idle_power / world.max_speed)
    }

    /// These weights with an unset energy unit filled in for `world`.
    pub fn for_world(self, world: &WorldConfig) -> Self {
        Self { energy_unit: Some(self.energy_unit.unwrap_or_else(|| Self::world_energy_unit(world))), ..self }
    }
}

/// The four reward terms, kept apart so they can be checked individually.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    pub coverage: f64,
    pub energy: f64,
    pub collision: f64,
    pub overlap: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.coverage - self.energy - self.collision - self.overlap
    }
}

pub fn reward_terms(delta: &RobotDelta, w: &RewardWeights) -> RewardTerms {
    RewardTerms {
        coverage: w.coverage * delta.new_cells as f64,
        energy: w.energy * delta.energy_spent / w.energy_unit.unwrap_or(1.0),
        collision: if delta.collided { w.collision } else { 0.0 },
        overlap: w.overlap * (delta.max_jaccard - w.overlap_threshold).max(0.0),
    }
}

/// Coverage gain minus energy, collision and overlap penalties.
pub fn sensing_reward(delta: &RobotDelta, w: &RewardWeights) -> f64 {
    reward_terms(delta, w).total()
}

/// TD target `reward + gamma * q_next`, without bootstrapping on terminal steps.
pub fn critic_target(reward: f64, done: bool, q_next: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_next
    }
}

/// Learning hyper-parameters for the actor-critic trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub noise_sigma: f64,
    pub noise_sigma_final: f64,
    pub episodes: usize,
    pub replay_capacity: usize,
    /// Actor hidden widths.
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub reward: RewardWeights,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 128,
            actor_lr: 0.03,
            critic_lr: 0.05,
            tau: 0.01,
            noise_sigma: 0.1,
            noise_sigma_final: 0.01,
            episodes: 300,
            replay_capacity: 50_000,
            hidden: DEFAULT_HIDDEN.to_vec(),
            critic_hidden: vec![64],
            reward: RewardWeights::default(),
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("ddpg.gamma", format!("must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("ddpg.tau", format!("must be in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("ddpg.batch_size", "must be >= 1"));
        }
        for (key, lr) in [("ddpg.actor_lr", self.actor_lr), ("ddpg.critic_lr", self.critic_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(key, format!("must be > 0, got {lr}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma_final >= 0.0) {
            return Err(Error::config("ddpg.noise_sigma", "must be >= 0"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::config("ddpg.replay_capacity", "must be at least batch_size"));
        }
        for (key, h) in [("ddpg.hidden", &self.hidden), ("ddpg.critic_hidden", &self.critic_hidden)] {
            if h.is_empty() || h.contains(&0) {
                return Err(Error::config(key, "needs at least one non-empty hidden layer"));
            }
        }
        if self.reward.energy_unit.is_some_and(|u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::config("ddpg.reward.energy_unit", "must be > 0"));
        }
        Ok(())
    }

    /// Exploration noise after `progress` in `[0, 1]` of training.
    pub fn sigma_at(&self, progress: f64) -> f64 {
        let t = progress.clamp(0.0, 1.0);
        self.noise_sigma + (self.noise_sigma_final - self.noise_sigma) * t
    }

    pub fn new_actor<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MlpModel> {
        MlpModel::init_uniform(topology(OBS_DIM, &self.hidden, ACTION_DIM)?, OutputActivation::Sigmoid, rng)
    }

    pub fn new_critic<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MlpModel> {
        MlpModel::init_uniform(topology(OBS_DIM + ACTION_DIM, &self.critic_hidden, 1)?, OutputActivation::Identity, rng)
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    target.ensure_same_shape(online, "soft update")?;
    if tau == 1.0 {
        target.values_mut().copy_from_slice(online.values());
        return Ok(());
    }
    for (t, o) in target.values_mut().iter_mut().zip(online.values()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Losses and magnitudes from one update, for logging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub mean_q: f64,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// One DDPG step on `batch`: critic regression toward TD targets, actor
/// ascent along the critic's action gradient, then soft target updates.
pub fn ddpg_update<A: Actor>(
    actor: &mut A,
    critic: &mut MlpModel,
    target_actor: &mut A,
    target_critic: &mut MlpModel,
    batch: &[&Transition],
    cfg: &DdpgConfig,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::invalid("ddpg update needs a non-empty batch"));
    }
    let n = batch.len() as f64;

    let mut critic_grad = vec![0.0; critic.params().len()];
    let mut loss = 0.0;
    for t in batch {
        let q_next = if t.done {
            0.0
        } else {
            let a_next = target_actor.act_raw(&t.next_obs)?;
            target_critic.forward(&concat(&t.next_obs, &a_next))?[0]
        };
        let y = critic_target(t.reward, t.done, q_next, cfg.gamma);
        let trace = critic.trace(&concat(&t.obs, &t.action))?;
        let q = trace.output()[0];
        loss += Loss::Mse.value(&[q], &[y]);
        critic.backward_accumulate(&trace, &[q - y], &mut critic_grad, false)?;
    }
    let step = cfg.critic_lr / n;
    for (p, g) in critic.params_mut().values_mut().iter_mut().zip(&critic_grad) {
        *p -= step * g;
    }
    if !critic.params().all_finite() {
        return Err(Error::NonFinite { layer: critic.num_layers() - 1 });
    }

    let obs_dim = batch[0].obs.len();
    let mut actor_grad = vec![0.0; actor.trainable().len()];
    let mut mean_q = 0.0;
    for t in batch {
        let a = actor.act_raw(&t.obs)?;
        let trace = critic.trace(&concat(&t.obs, &a))?;
        mean_q += trace.output()[0];
        // maximise Q: descend on -Q
        let (d_in, _) = critic.backward_accumulate(&trace, &[-1.0], &mut vec![0.0; critic.params().len()], false)?;
        actor.accumulate_gradient(&t.obs, &d_in[obs_dim..], &mut actor_grad)?;
    }
    let step = cfg.actor_lr / n;
    for (p, g) in actor.trainable_mut().values_mut().iter_mut().zip(&actor_grad) {
        *p -= step * g;
    }
    if !actor.trainable().all_finite() {
        return Err(Error::NonFinite { layer: 0 });
    }

    soft_update(target_critic.params_mut(), critic.params(), cfg.tau)?;
    soft_update(target_actor.trainable_mut(), actor.trainable(), cfg.tau)?;
    Ok(UpdateStats { critic_loss: loss / n, mean_q: mean_q / n })
}

/// A robot's learner: online and target networks, replay and its own RNG.
#[derive(Clone, Debug)]
pub struct DdpgAgent<A> {
    pub actor: A,
    pub critic: MlpModel,
    pub target_actor: A,
    pub target_critic: MlpModel,
    pub buffer: ReplayBuffer,
    pub cfg: DdpgConfig,
    pub rng: ChaCha8Rng,
    pub updates: usize,
}

impl<A: Actor + Clone> DdpgAgent<A> {
    pub fn new(actor: A, critic: MlpModel, cfg: DdpgConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(cfg.replay_capacity)?,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: 0,
        })
    }

    /// Swaps in a new actor and hard-syncs its target copy.
    pub fn replace_actor(&mut self, actor: A) {
        self.target_actor = actor.clone();
        self.actor = actor;
    }

    pub fn act(&mut self, obs: &Observation, noise_sigma: f64) -> Result<Action> {
        act(&self.actor, obs, noise_sigma, &mut self.rng)
    }

    /// One update from a uniformly sampled batch; `None` while the buffer is
    /// still smaller than a batch.
    pub fn update(&mut self) -> Result<Option<UpdateStats>> {
        let Some(batch) = self.buffer.sample(self.cfg.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let stats = ddpg_update(
            &mut self.actor,
            &mut self.critic,
            &mut self.target_actor,
            &mut self.target_critic,
            &batch,
            &self.cfg,
        )?;
        self.updates += 1;
        Ok(Some(stats))
    }
}

/// Settings for single-robot episodic training.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSettings {
    pub world: WorldConfig,
    pub episodes: usize,
    pub ticks: usize,
    pub dt: f64,
    /// Environment steps between DDPG updates.
    pub update_every: usize,
}

/// Outcome of one training episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub coverage: f64,
    pub reward: f64,
    /// Mean commanded speed fraction over the episode.
    pub mean_speed: f64,
}

/// Trains a fresh agent episode by episode, respawning the world from
/// `seed + episode` each time. Returns per-episode coverage and reward.
pub fn train_episodes(settings: &EpisodeSettings, cfg: &DdpgConfig, seed: u64) -> Result<Vec<EpisodeStats>> {
    if settings.update_every == 0 || settings.ticks == 0 {
        return Err(Error::invalid("episodes need ticks >= 1 and update_every >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actor = cfg.new_actor(&mut rng)?;
    let critic = cfg.new_critic(&mut rng)?;
    let mut agent = DdpgAgent::new(actor, critic, cfg.clone(), seed ^ 0x5eed)?;
    let weights = cfg.reward.for_world(&settings.world);
    let mut out = Vec::with_capacity(settings.episodes);
    let mut steps = 0usize;
    for ep in 0..settings.episodes {
        let sigma = cfg.sigma_at(ep as f64 / settings.episodes.max(2).saturating_sub(1) as f64);
        let mut world = WorldState::spawn(&WorldConfig {
            seed: settings.world.seed.wrapping_add(seed.wrapping_mul(1_000_003)).wrapping_add(ep as u64),
            ..settings.world.clone()
        })?;
        let mut total = 0.0;
        let mut speed = 0.0;
        let mut taken = 0;
        let mut obs = observe(&world, 0);
        for _ in 0..settings.ticks {
            let mut commands = vec![Command::HOLD; world.robots.len()];
            let action = agent.act(&obs, sigma)?;
            commands[0] = action.to_command(&world, 0);
            speed += action.speed_fraction;
            taken += 1;
            let deltas = world.step(&commands, settings.dt)?;
            let reward = sensing_reward(&deltas[0], &weights);
            let next = observe(&world, 0);
            let done = !world.robots[0].alive();
            agent.buffer.push(Transition {
                obs: obs.0.to_vec(),
                action: action.to_array().to_vec(),
                reward,
                next_obs: next.0.to_vec(),
                done,
            });
            total += reward;
            obs = next;
            steps += 1;
            if steps.is_multiple_of(settings.update_every) {
                agent.update()?;
            }
            if done {
                break;
            }
        }
        out.push(EpisodeStats {
            coverage: world.covered_cells() as f64 / world.config.cell_count() as f64,
            reward: total,
            mean_speed: speed / taken as f64,
        });
    }
    Ok(out)
}
