//! One simulated episode under one method.
//!
//! All methods share the clock: the world advances in ticks of `dt`, rounds
//! fire on tick boundaries, and whatever a round produces reaches a robot
//! only at its delivery time on the comms timeline.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregation::{attention_round, fedavg, select_participants, EligibilityRecord};
use crate::comms::{payload_size, round_trip_model_exchange, PacketRecord, Payload, Topology, Transfer};
use crate::config::Scenario;
use crate::error::Result;
use crate::experiment::{Method, Metrics};
use crate::fusion::{fallback_retrain, fallback_triggered, fuse_update, FusedModel, FusionBranch, Rollout};
use crate::model::{serialized_len, MlpModel, OutputActivation, ParamVector};
use crate::policy::{observe, sensing_reward, Action, Actor, DdpgAgent, Observation, RewardWeights, Transition};
use crate::splitting::{distillation_data, split_for_robot, SubModel};
use crate::trace::Trace;
use crate::world::{Command, Point, RobotId, WorldConfig, WorldState};

/// A robot's actor: its own small model, optionally with a fused branch
/// from the large model.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Plain(MlpModel),
    Fused(FusedModel),
}

impl Policy {
    pub fn base(&self) -> &MlpModel {
        match self {
            Policy::Plain(m) => m,
            Policy::Fused(f) => &f.base,
        }
    }

    /// Same base model, with `sub` attached through `branch`.
    pub fn with_fusion(&self, sub: SubModel, branch: FusionBranch) -> Result<Policy> {
        Ok(Policy::Fused(FusedModel::new(self.base().clone(), sub, branch)?))
    }
}

impl Actor for Policy {
    fn act_raw(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Policy::Plain(m) => m.act_raw(obs),
            Policy::Fused(f) => f.act_raw(obs),
        }
    }

    fn accumulate_gradient(&self, obs: &[f64], d_action: &[f64], acc: &mut [f64]) -> Result<()> {
        match self {
            Policy::Plain(m) => m.accumulate_gradient(obs, d_action, acc),
            Policy::Fused(f) => f.accumulate_gradient(obs, d_action, acc),
        }
    }

    fn trainable(&self) -> &ParamVector {
        match self {
            Policy::Plain(m) => m.trainable(),
            Policy::Fused(f) => f.trainable(),
        }
    }

    fn trainable_mut(&mut self) -> &mut ParamVector {
        match self {
            Policy::Plain(m) => m.trainable_mut(),
            Policy::Fused(f) => f.trainable_mut(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_trace: bool,
    /// Measure wall-clock time; off by default so outputs stay bit-exact.
    pub timing: bool,
}

/// What happened in one communication round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub time_s: f64,
    pub participants: Vec<RobotId>,
    pub attention_weights: Vec<(RobotId, f64)>,
    /// Chosen fusion layer per robot.
    pub branches: Vec<(RobotId, usize)>,
    pub bytes: u64,
    pub completion_s: Vec<(RobotId, f64)>,
    pub unreachable: Vec<RobotId>,
    pub sensing_accuracy: f64,
    pub coverage: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub n_robots: usize,
    pub n_targets: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub rounds: Vec<RoundReport>,
    pub packets: Vec<PacketRecord>,
    pub trace: Option<Trace>,
    pub world: WorldState,
    pub wall_ms: u64,
}

/// Deterministic 64-bit mix of two values (splitmix64 finaliser).
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

enum Update {
    Fuse { sub: SubModel, branch: FusionBranch },
    Merge(Vec<ParamVector>),
    Schedule(Vec<Action>),
}

struct Delivery {
    at: f64,
    robot: usize,
    update: Update,
}

struct Run<'a> {
    sc: &'a Scenario,
    method: Method,
    seed: u64,
    world: WorldState,
    weights: RewardWeights,
    /// Per-robot learners (LSAI, Distributed).
    agents: Vec<DdpgAgent<Policy>>,
    /// The single cloud learner (Centralized).
    cloud: Option<DdpgAgent<Policy>>,
    schedules: Vec<VecDeque<Action>>,
    uplink: Vec<Vec<Transition>>,
    records: Vec<EligibilityRecord>,
    global: ParamVector,
    pending: Vec<Delivery>,
    reports: Vec<RoundReport>,
    packets: Vec<PacketRecord>,
    bytes: u64,
    trace: Option<Trace>,
}

/// Runs `method` on the scenario with `scenario.world.n_robots` robots.
/// Deterministic in `(method, scenario, seed)`.
pub fn run_method(method: Method, scenario: &Scenario, seed: u64, options: RunOptions) -> Result<RunOutput> {
    scenario.validate()?;
    let started = options.timing.then(Instant::now);
    let world_cfg = WorldConfig { seed: mix(scenario.world.seed, seed), ..scenario.world.clone() };
    let world = WorldState::spawn(&world_cfg)?;
    let n = world.robots.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
    let actor = scenario.ddpg.new_actor(&mut rng)?;
    let critic = scenario.ddpg.new_critic(&mut rng)?;
    let global = actor.params().clone();
    let make_agent =
        |k: u64| DdpgAgent::new(Policy::Plain(actor.clone()), critic.clone(), scenario.ddpg.clone(), mix(seed, k));
    let (agents, cloud) = match method {
        Method::Centralized => (Vec::new(), Some(make_agent(99)?)),
        _ => ((0..n).map(|i| make_agent(100 + i as u64)).collect::<Result<Vec<_>>>()?, None),
    };
    let mut run = Run {
        sc: scenario,
        method,
        seed,
        weights: scenario.ddpg.reward.for_world(&world_cfg),
        agents,
        cloud,
        schedules: vec![VecDeque::new(); n],
        uplink: vec![Vec::new(); n],
        records: world.robots.iter().map(|r| EligibilityRecord::new(r.id, r.position)).collect(),
        global,
        pending: Vec::new(),
        reports: Vec::new(),
        packets: Vec::new(),
        bytes: 0,
        trace: options.record_trace.then(|| Trace::start(&world)),
        world,
    };
    run.execute()?;
    let exp = &scenario.experiment;
    let metrics = Metrics::from_world(&run.world, exp.response_threshold, run.bytes);
    if let Some(t) = run.trace.as_mut() {
        t.finish(&run.world, exp.response_threshold);
    }
    Ok(RunOutput {
        method,
        n_robots: n,
        n_targets: run.world.targets.len(),
        seed,
        metrics,
        rounds: run.reports,
        packets: run.packets,
        trace: run.trace,
        world: run.world,
        wall_ms: started.map_or(0, |s| s.elapsed().as_millis() as u64),
    })
}

impl Run<'_> {
    fn execute(&mut self) -> Result<()> {
        let exp = &self.sc.experiment;
        let (ticks, every) = (exp.ticks(), exp.round_ticks());
        for tick in 0..ticks {
            if tick % every == 0 {
                // Centralized plans at the start of each round window; the
                // others exchange at its end.
                let k = tick / every;
                match self.method {
                    Method::Centralized if k < exp.rounds => {
                        self.cloud_round(k + 1, tick).map_err(|e| e.in_round(k + 1))?
                    }
                    Method::Lsai if k >= 1 && k <= exp.rounds => self.lsai_round(k).map_err(|e| e.in_round(k))?,
                    Method::Distributed if k >= 1 && k <= exp.rounds => {
                        self.distributed_round(k).map_err(|e| e.in_round(k))?
                    }
                    _ => {}
                }
            }
            self.deliver()?;
            self.step(tick)?;
        }
        Ok(())
    }

    fn step(&mut self, tick: usize) -> Result<()> {
        let exp = &self.sc.experiment;
        let n = self.world.robots.len();
        let sigma = self.sc.ddpg.sigma_at(self.world.clock / exp.horizon_s);
        let obs: Vec<Observation> = (0..n).map(|i| observe(&self.world, i)).collect();
        let mut actions: Vec<Option<Action>> = vec![None; n];
        for i in 0..n {
            if !self.world.robots[i].alive() {
                continue;
            }
            actions[i] = match self.method {
                Method::Centralized => self.schedules[i].pop_front(),
                _ => Some(self.agents[i].act(&obs[i], sigma)?),
            };
        }
        let commands: Vec<Command> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                Some(a) => a.to_command(&self.world, i),
                None => Command { heading: self.world.robots[i].heading, speed: 0.0 },
            })
            .collect();
        let deltas = self.world.step(&commands, exp.dt)?;
        for (i, a) in actions.iter().enumerate() {
            let Some(a) = a else { continue };
            let t = Transition {
                obs: obs[i].0.to_vec(),
                action: a.to_array().to_vec(),
                reward: sensing_reward(&deltas[i], &self.weights),
                next_obs: observe(&self.world, i).0.to_vec(),
                done: !self.world.robots[i].alive(),
            };
            match self.method {
                Method::Centralized => self.uplink[i].push(t),
                _ => self.agents[i].buffer.push(t),
            }
        }
        if self.method != Method::Centralized && (tick + 1).is_multiple_of(exp.update_every) {
            for a in &mut self.agents {
                a.update()?;
            }
        }
        if let Some(t) = self.trace.as_mut() {
            t.record(&self.world);
        }
        Ok(())
    }

    /// Applies every delivery that has arrived by the current clock.
    fn deliver(&mut self) -> Result<()> {
        let now = self.world.clock;
        let (due, rest): (Vec<Delivery>, Vec<Delivery>) =
            std::mem::take(&mut self.pending).into_iter().partition(|d| d.at <= now);
        self.pending = rest;
        for d in due {
            match d.update {
                Update::Fuse { sub, branch } => {
                    let agent = &mut self.agents[d.robot];
                    agent.actor = agent.actor.with_fusion(sub.clone(), branch.clone())?;
                    agent.target_actor = agent.target_actor.with_fusion(sub, branch)?;
                }
                Update::Merge(received) => {
                    let agent = &mut self.agents[d.robot];
                    let mut all: Vec<&ParamVector> = vec![agent.actor.trainable()];
                    all.extend(received.iter());
                    let merged = fedavg(&all)?;
                    *agent.actor.trainable_mut() = merged;
                }
                Update::Schedule(actions) => self.schedules[d.robot] = actions.into(),
            }
        }
        Ok(())
    }

    fn report(&self, round: usize) -> RoundReport {
        RoundReport {
            round,
            time_s: self.world.clock,
            participants: Vec::new(),
            attention_weights: Vec::new(),
            branches: Vec::new(),
            bytes: 0,
            completion_s: Vec::new(),
            unreachable: Vec::new(),
            sensing_accuracy: super::sensing_accuracy(&self.world),
            coverage: self.world.covered_cells() as f64 / self.world.config.cell_count() as f64,
            warnings: Vec::new(),
        }
    }

    fn log_packets(&mut self, round: usize, exchange: &crate::comms::Exchange, report: &mut RoundReport) {
        self.packets.extend(exchange.packets.iter().map(|p| PacketRecord { round, packet: *p }));
        self.bytes += exchange.total_bytes;
        report.bytes = exchange.total_bytes;
        report.completion_s = exchange.completion.iter().map(|(r, t)| (*r, *t)).collect();
        report.unreachable = exchange.unreachable.clone();
        for r in &exchange.unreachable {
            report.warnings.push(format!("robot {r} unreachable"));
        }
    }

    fn edge_position(&self) -> Point {
        let c = self.world.config.arena_size / 2.0;
        Point::new(c, c)
    }

    /// Upload, attention aggregation, splitting, fusion and downlink.
    fn lsai_round(&mut self, round: usize) -> Result<()> {
        let sc = self.sc;
        let mut report = self.report(round);
        let edge = self.edge_position();
        for (rec, r) in self.records.iter_mut().zip(&self.world.robots) {
            rec.last_known_position = r.position;
        }
        let alive: Vec<EligibilityRecord> =
            self.records.iter().filter(|r| self.world.robots[r.robot_id as usize].alive()).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 10_000 + round as u64));
        let agg = &sc.aggregation;
        let selected = select_participants(&alive, edge, agg.selection_radius, agg.min_history, &mut rng)?;
        let mut chosen: Vec<RobotId> = selected.into_iter().collect();
        chosen.sort_by(|a, b| {
            let (ha, hb) = (self.records[*a as usize].historical_score, self.records[*b as usize].historical_score);
            hb.total_cmp(&ha).then(a.cmp(b))
        });
        chosen.truncate(((agg.participants_fraction * chosen.len() as f64).ceil() as usize).max(1));
        chosen.sort_unstable();
        report.participants = chosen.clone();
        if chosen.is_empty() {
            report.warnings.push("no participants".into());
            self.reports.push(report);
            return Ok(());
        }
        let reachable = |id: RobotId| self.world.robots[id as usize].position.distance(&edge) <= sc.comms.edge_range;
        let up_ids: Vec<RobotId> = chosen.iter().copied().filter(|id| reachable(*id)).collect();
        let now = self.world.clock;
        let mut transfers: Vec<Transfer> = chosen
            .iter()
            .map(|&id| Transfer {
                robot: id,
                up_bytes: serialized_len(self.agents[id as usize].actor.trainable().shapes()),
                down_bytes: 0,
                ready_at: now,
                reachable: reachable(id),
            })
            .collect();
        let mut updates: BTreeMap<RobotId, Update> = BTreeMap::new();
        if !up_ids.is_empty() {
            let uploads: Vec<(RobotId, ParamVector)> =
                up_ids.iter().map(|id| (*id, self.agents[*id as usize].actor.trainable().clone())).collect();
            let refs: Vec<(RobotId, &ParamVector)> = uploads.iter().map(|(id, p)| (*id, p)).collect();
            let att = attention_round(&refs, &self.global, agg.temperature)?;
            for s in &att.scores {
                self.records[s.robot_id as usize].observe(s.score);
            }
            report.attention_weights = att.weights.weights.clone();
            self.global = att.global;
            let lai = MlpModel::new(self.global.clone(), OutputActivation::Sigmoid)?;
            let fusion = &sc.fusion;
            let elapsed = fusion.fusion_elapsed(up_ids.len());
            if fallback_triggered(up_ids.len(), fusion.fusion_capacity, elapsed, fusion.deadline_s) {
                report.warnings.push(format!("fusion fallback: {} robots, {elapsed:.2} s", up_ids.len()));
                let iterations = fusion.fallback_iterations(sc.ddpg.episodes);
                for &id in &up_ids {
                    let agent = &mut self.agents[id as usize];
                    let s = mix(self.seed, 20_000 + round as u64 * 1_000 + id as u64);
                    let (a, c) =
                        fallback_retrain(agent.actor.base(), &agent.critic, &agent.buffer, iterations, &sc.ddpg, s)?;
                    *agent.actor.trainable_mut() = a.params().clone();
                    agent.critic = c;
                }
            } else {
                let schedule = sc.splitting.schedule();
                for &id in &up_ids {
                    let i = id as usize;
                    let inputs: Vec<Vec<f64>> =
                        self.agents[i].buffer.recent(sc.splitting.window).map(|t| t.obs.clone()).collect();
                    let data = distillation_data(&lai, &inputs)?;
                    let split = split_for_robot(&lai, &schedule, &data, id, &sc.splitting.sgd())?;
                    if split.fine_tune_skipped {
                        report.warnings.push(format!("robot {id}: no trajectory data, fine-tuning skipped"));
                    }
                    let rollout = Rollout {
                        robot: i,
                        steps: fusion.rollout_steps,
                        dt: sc.experiment.dt,
                        alpha: fusion.alpha,
                        beta: fusion.beta,
                        noise_sigma: fusion.eval_noise,
                        seed: mix(self.seed, 30_000 + round as u64 * 1_000 + id as u64),
                    };
                    let out =
                        fuse_update(self.agents[i].actor.base(), &split.sub, &data, &self.world, &rollout, fusion)?;
                    let branch = out.fused.branch;
                    report.branches.push((id, branch.r));
                    let down = payload_size(Payload::SubModelWithBranch {
                        model: split.sub.model.shapes(),
                        branch: branch.shape(),
                    });
                    debug_assert_eq!(down, split.sub.serialized_len() + branch.to_bytes().len());
                    if let Some(t) = transfers.iter_mut().find(|t| t.robot == id) {
                        t.down_bytes = down;
                    }
                    updates.insert(id, Update::Fuse { sub: split.sub, branch });
                }
            }
            let hub = if updates.is_empty() { 0.0 } else { elapsed };
            let exchange = round_trip_model_exchange(&Topology::EdgeLsai { edge: 0 }, &sc.comms, &transfers, hub)?;
            for (id, update) in updates {
                self.pending.push(Delivery { at: exchange.completion[&id], robot: id as usize, update });
            }
            self.log_packets(round, &exchange, &mut report);
        } else {
            report.unreachable = chosen.clone();
            for r in &chosen {
                report.warnings.push(format!("robot {r} unreachable"));
            }
        }
        self.reports.push(report);
        Ok(())
    }

    /// Each robot sends its model to the robots in radio range; receivers
    /// average what they got with their own model on arrival.
    fn distributed_round(&mut self, round: usize) -> Result<()> {
        let sc = self.sc;
        let mut report = self.report(round);
        let n = self.world.robots.len();
        let alive: Vec<usize> = (0..n).filter(|i| self.world.robots[*i].alive()).collect();
        let mut neighbors: BTreeMap<RobotId, Vec<RobotId>> = BTreeMap::new();
        for &i in &alive {
            let p = self.world.robots[i].position;
            let near = alive
                .iter()
                .copied()
                .filter(|&j| j != i && self.world.robots[j].position.distance(&p) <= sc.comms.peer_range)
                .map(|j| j as RobotId)
                .collect();
            neighbors.insert(i as RobotId, near);
        }
        report.participants = alive.iter().map(|i| *i as RobotId).collect();
        if alive.is_empty() {
            self.reports.push(report);
            return Ok(());
        }
        let now = self.world.clock;
        let transfers: Vec<Transfer> = alive
            .iter()
            .map(|&i| Transfer {
                robot: i as RobotId,
                up_bytes: payload_size(Payload::Model(self.agents[i].actor.trainable().shapes())),
                down_bytes: 0,
                ready_at: now,
                reachable: true,
            })
            .collect();
        let exchange = round_trip_model_exchange(
            &Topology::Distributed { neighbors: neighbors.clone() },
            &sc.comms,
            &transfers,
            0.0,
        )?;
        let mut inbound: BTreeMap<RobotId, Vec<ParamVector>> = BTreeMap::new();
        for (src, dsts) in &neighbors {
            for d in dsts {
                inbound.entry(*d).or_default().push(self.agents[*src as usize].actor.trainable().clone());
            }
        }
        for (id, received) in inbound {
            self.pending.push(Delivery {
                at: exchange.completion[&id],
                robot: id as usize,
                update: Update::Merge(received),
            });
        }
        self.log_packets(round, &exchange, &mut report);
        self.reports.push(report);
        Ok(())
    }

    /// Robots upload raw observations; the cloud trains its single model
    /// and plans every robot's actions in a copy of the world.
    fn cloud_round(&mut self, round: usize, tick: usize) -> Result<()> {
        let sc = self.sc;
        let exp = &sc.experiment;
        let mut report = self.report(round);
        let n = self.world.robots.len();
        let alive: Vec<usize> = (0..n).filter(|i| self.world.robots[*i].alive()).collect();
        report.participants = alive.iter().map(|i| *i as RobotId).collect();
        if alive.is_empty() {
            self.reports.push(report);
            return Ok(());
        }
        let remaining = exp.ticks() - tick;
        let horizon = if round == exp.rounds { remaining } else { (2 * exp.round_ticks()).min(remaining) };
        let now = self.world.clock;
        let transfers: Vec<Transfer> = alive
            .iter()
            .map(|&i| Transfer {
                robot: i as RobotId,
                up_bytes: payload_size(Payload::Observations(self.uplink[i].len())),
                down_bytes: payload_size(Payload::ActionSchedule(horizon)),
                ready_at: now,
                reachable: true,
            })
            .collect();
        let cloud = self.cloud.as_mut().expect("centralized run has a cloud learner");
        for batch in &mut self.uplink {
            for t in batch.drain(..) {
                cloud.buffer.push(t);
            }
        }
        let budget = alive.len() * exp.round_ticks() / exp.update_every;
        for _ in 0..budget {
            cloud.update()?;
        }
        let mut sim = self.world.clone();
        let mut plans: Vec<Vec<Action>> = vec![Vec::with_capacity(horizon); n];
        for _ in 0..horizon {
            let sigma = sc.ddpg.sigma_at(sim.clock / exp.horizon_s);
            let mut commands = vec![Command::HOLD; n];
            for &i in &alive {
                if !sim.robots[i].alive() {
                    continue;
                }
                let a = cloud.act(&observe(&sim, i), sigma)?;
                commands[i] = a.to_command(&sim, i);
                plans[i].push(a);
            }
            sim.step(&commands, exp.dt)?;
        }
        let exchange = round_trip_model_exchange(&Topology::Centralized, &sc.comms, &transfers, 0.0)?;
        for &i in &alive {
            self.pending.push(Delivery {
                at: exchange.completion[&(i as RobotId)],
                robot: i,
                update: Update::Schedule(std::mem::take(&mut plans[i])),
            });
        }
        self.log_packets(round, &exchange, &mut report);
        self.reports.push(report);
        Ok(())
    }
}
