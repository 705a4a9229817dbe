//! Self-checks against brute-force oracles, runnable from the command line.
//!
//! Each suite rebuilds its expectation independently (finite differences,
//! sorting, set scans, hand-built timelines) and compares it with what the
//! library computes.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate, attention_weights, fedavg, AttentionScore};
use crate::comms::{
    round_trip_model_exchange, transmit, Channel, CommsConfig, LinkConfig, NodeId, Packet, Topology, Transfer,
};
use crate::config::Scenario;
use crate::experiment::{run_method, Method, RunOptions};
use crate::fusion::{
    enumerate_branches, evaluate_branch, fuse_update, train_branch, FusedModel, FusionBranch, FusionConfig, Rollout,
};
use crate::model::{topology, Loss, MlpModel, OutputActivation, ParamVector, SgdConfig, DEFAULT_HIDDEN};
use crate::policy::{ACTION_DIM, OBS_DIM};
use crate::splitting::{build_mask, distillation_data, fine_tune, prune_count, SubModel};
use crate::world::{jaccard, CellSet, Command, WorldConfig, WorldState};

pub const SUITES: [&str; 8] =
    ["gradcheck", "softmax", "prune", "jaccard", "fusion-argmin", "comms-fifo", "energy", "determinism"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Flip one bit of the pruning fixture's mask so the prune suite must
    /// fail. Used to check that the suite can fail at all.
    pub corrupt_mask_bit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = std::result::Result<String, String>;

pub fn run_suite(name: &str, options: &VerifyOptions) -> Option<SuiteResult> {
    let name = *SUITES.iter().find(|s| **s == name)?;
    let outcome = match name {
        "gradcheck" => gradcheck(),
        "softmax" => softmax(),
        "prune" => prune(options.corrupt_mask_bit),
        "jaccard" => jaccard_suite(),
        "fusion-argmin" => fusion_argmin(),
        "comms-fifo" => comms_fifo(),
        "energy" => energy(),
        "determinism" => determinism(),
        _ => unreachable!(),
    };
    Some(match outcome {
        Ok(detail) => SuiteResult { name, passed: true, detail },
        Err(detail) => SuiteResult { name, passed: false, detail },
    })
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<T>(r: crate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Backprop against central differences on 100 random small networks.
pub fn gradcheck() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rng.gen_range(1..5);
        let output = rng.gen_range(1..4);
        let hidden: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..7)).collect();
        let act = if rng.gen_bool(0.5) { OutputActivation::Sigmoid } else { OutputActivation::Identity };
        let shapes = e2s(topology(input, &hidden, output))?;
        let mut m = e2s(MlpModel::init_uniform(shapes, act, &mut rng))?;
        for v in m.params_mut().values_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = e2s(m.backprop(&x, &t, Loss::Mse))?;
        let h = 1e-5;
        let mut num = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let mut p = m.clone();
            p.params_mut().values_mut()[k] += h;
            let mut q = m.clone();
            q.params_mut().values_mut()[k] -= h;
            let lp = Loss::Mse.value(&e2s(p.forward(&x))?, &t);
            let lq = Loss::Mse.value(&e2s(q.forward(&x))?, &t);
            num.push((lp - lq) / (2.0 * h));
        }
        let diff: f64 = analytic.values().iter().zip(&num).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let na = analytic.norm();
        let nn = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = if na.max(nn) < 1e-12 { 0.0 } else { diff / na.max(nn) };
        ensure(rel < 1e-4, || format!("net {seed}: relative error {rel:e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("nets=100 max_rel_error={worst:e}"))
}

/// Softmax normalisation and shift invariance, and uniform aggregation
/// against a plain mean.
pub fn softmax() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.gen_range(1..20);
        let scores: Vec<AttentionScore> =
            (0..n).map(|i| AttentionScore { robot_id: i as u32, score: rng.gen_range(-1.0..1.0) }).collect();
        let t = rng.gen_range(0.05..3.0);
        let w = e2s(attention_weights(&scores, t))?;
        let sum: f64 = w.weights.iter().map(|x| x.1).sum();
        ensure((sum - 1.0).abs() <= 1e-9, || format!("case {case}: weights sum to {sum}"))?;
        worst_sum = worst_sum.max((sum - 1.0).abs());
        let c = rng.gen_range(-5.0..5.0);
        let shifted: Vec<AttentionScore> = scores.iter().map(|s| AttentionScore { score: s.score + c, ..*s }).collect();
        let w2 = e2s(attention_weights(&shifted, t))?;
        for (a, b) in w.weights.iter().zip(&w2.weights) {
            let d = (a.1 - b.1).abs();
            ensure(d <= 1e-12, || format!("case {case}: shift by {c} moved a weight by {d:e}"))?;
            worst_shift = worst_shift.max(d);
        }
    }
    for case in 0..100 {
        let n = rng.gen_range(1..9);
        let len = rng.gen_range(2..30);
        let shapes = e2s(topology(len - 1, &[], 1))?;
        let models: Vec<ParamVector> = (0..n)
            .map(|_| ParamVector::new(shapes.clone(), (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect()))
            .collect::<crate::Result<_>>()
            .map_err(|e| e.to_string())?;
        let refs: Vec<&ParamVector> = models.iter().collect();
        let pairs: Vec<(&ParamVector, f64)> = refs.iter().map(|m| (*m, 1.0 / n as f64)).collect();
        let a = e2s(aggregate(&pairs))?;
        let f = e2s(fedavg(&refs))?;
        let mut mean = vec![0.0; len];
        for m in &models {
            for (acc, v) in mean.iter_mut().zip(m.values()) {
                *acc += v * (1.0 / n as f64);
            }
        }
        ensure(a.values() == f.values(), || format!("case {case}: uniform aggregate differs from fedavg"))?;
        ensure(a.values() == mean.as_slice(), || format!("case {case}: uniform aggregate differs from the mean"))?;
    }
    Ok(format!("vectors=1000 max_sum_error={worst_sum:e} max_shift_error={worst_shift:e}"))
}

/// Zero counts against a sort oracle, then 500 masked fine-tuning steps.
pub fn prune(corrupt: bool) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shapes = e2s(topology(OBS_DIM, &DEFAULT_HIDDEN, ACTION_DIM))?;
    let model = e2s(MlpModel::init_uniform(shapes, OutputActivation::Sigmoid, &mut rng))?;
    let params = model.params().clone();
    let n = params.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| params.values()[*a].abs().total_cmp(&params.values()[*b].abs()).then(a.cmp(b)));
    for tenth in 0..10 {
        let s = tenth as f64 / 10.0;
        let mask = e2s(build_mask(&params, s))?;
        let k = (s * n as f64).floor() as usize;
        ensure(prune_count(s, n) == k, || format!("s={s}: prune count {} != floor(s*N) {k}", prune_count(s, n)))?;
        ensure(mask.count_zeros() == k, || format!("s={s}: {} zeros, expected {k}", mask.count_zeros()))?;
        let oracle: BTreeSet<usize> = order[..k].iter().copied().collect();
        let pruned: BTreeSet<usize> = (0..n).filter(|i| !mask.bits()[*i]).collect();
        ensure(oracle == pruned, || format!("s={s}: pruned set differs from the sort oracle"))?;
    }
    let mut mask = e2s(build_mask(&params, 0.5))?;
    if corrupt {
        mask.corrupt_bit(order[0]);
    }
    let sub = e2s(SubModel::new(0, model.clone(), mask))?;
    let expected: BTreeSet<usize> = order[..prune_count(0.5, n)].iter().copied().collect();
    let kept_zero: BTreeSet<usize> = (0..n).filter(|i| !sub.mask.bits()[*i]).collect();
    ensure(kept_zero == expected, || "fixture mask does not match the sort oracle".to_string())?;
    let inputs: Vec<Vec<f64>> = (0..64).map(|_| (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let data = e2s(distillation_data(&model, &inputs))?
        .into_iter()
        .map(|(x, t)| (x, t.iter().map(|v| 1.0 - v).collect()))
        .collect::<Vec<_>>();
    let cfg = SgdConfig { learning_rate: 0.1, batch_size: 16 };
    let mut cur = sub;
    for step in 0..500 {
        cur = e2s(fine_tune(&cur, &data, 1, &cfg))?;
        for &k in &expected {
            let v = cur.params().values()[k];
            ensure(v.to_bits() == 0, || format!("step {step}: pruned coordinate {k} is {v:e}"))?;
        }
    }
    Ok(format!("params={n} sparsities=10 fine_tune_steps=500"))
}

/// Jaccard index against a brute-force count over random sets.
pub fn jaccard_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..1000 {
        let universe = rng.gen_range(1..10_000);
        let pa = rng.gen_range(0.0..1.0);
        let pb = rng.gen_range(0.0..1.0);
        let a: Vec<usize> = (0..universe).filter(|_| rng.gen_bool(pa)).collect();
        let b: Vec<usize> = (0..universe).filter(|_| rng.gen_bool(pb)).collect();
        let (mut inter, mut union) = (0usize, 0usize);
        for c in 0..universe {
            let (x, y) = (a.binary_search(&c).is_ok(), b.binary_search(&c).is_ok());
            inter += (x && y) as usize;
            union += (x || y) as usize;
        }
        let oracle = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        let got = jaccard(&a.iter().copied().collect::<CellSet>(), &b.iter().copied().collect::<CellSet>());
        ensure(got == oracle, || format!("case {case}: jaccard {got} vs brute force {oracle}"))?;
    }
    Ok("pairs=1000".into())
}

/// Zero-transform identity, then the fused branch against an exhaustive
/// evaluation of every branch.
pub fn fusion_argmin() -> Check {
    let shapes = e2s(topology(OBS_DIM, &DEFAULT_HIDDEN, ACTION_DIM))?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let sai = e2s(MlpModel::init_uniform(shapes.clone(), OutputActivation::Sigmoid, &mut rng))?;
    let lai = e2s(MlpModel::init_uniform(shapes.clone(), OutputActivation::Sigmoid, &mut rng))?;
    let sub = e2s(SubModel::new(0, lai.clone(), e2s(build_mask(lai.params(), 0.5))?))?;
    for b in e2s(enumerate_branches(&sai, &sub))? {
        let fused = e2s(FusedModel::new(sai.clone(), sub.clone(), b))?;
        for _ in 0..100 {
            let x: Vec<f64> = (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (f, s) = (e2s(fused.forward(&x))?, e2s(sai.forward(&x))?);
            ensure(f.iter().zip(&s).all(|(a, b)| a.to_bits() == b.to_bits()), || {
                format!("zero branch at layer {} changed the output", fused.branch.r)
            })?;
        }
    }
    let cfg = FusionConfig { branch_train_steps: 20, ..FusionConfig::default() };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let sai = e2s(MlpModel::init_uniform(shapes.clone(), OutputActivation::Sigmoid, &mut rng))?;
        let lai = e2s(MlpModel::init_uniform(shapes.clone(), OutputActivation::Sigmoid, &mut rng))?;
        let sub = e2s(SubModel::new(0, lai.clone(), e2s(build_mask(lai.params(), 0.3))?))?;
        let world =
            e2s(WorldState::spawn(&WorldConfig { arena_size: 100.0, n_robots: 4, seed, ..WorldConfig::default() }))?;
        let inputs: Vec<Vec<f64>> = (0..32).map(|_| (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let data = e2s(distillation_data(&lai, &inputs))?;
        let rollout = Rollout { robot: 0, steps: 15, dt: 1.0, alpha: 1.0, beta: 10.0, noise_sigma: 0.1, seed };
        let out = e2s(fuse_update(&sai, &sub, &data, &world, &rollout, &cfg))?;
        let mut values = Vec::new();
        for r in 1..DEFAULT_HIDDEN.len() + 1 {
            let (sw, bw) = (sub.model.shapes()[r - 1].output_dim, sai.shapes()[r - 1].output_dim);
            let zero = e2s(FusedModel::new(sai.clone(), sub.clone(), e2s(FusionBranch::zero(r, sw, bw))?))?;
            let trained = e2s(train_branch(&zero, &data, cfg.branch_train_steps, &cfg.sgd()))?;
            let fused = FusedModel { branch: trained, ..zero };
            values.push((r, e2s(evaluate_branch(&fused, &world, &rollout))?.value));
        }
        ensure(values.len() == 3, || format!("expected 3 branches, found {}", values.len()))?;
        let best = values.iter().fold(values[0], |b, v| if v.1 < b.1 { *v } else { b });
        ensure(out.fused.branch.r == best.0, || {
            format!("seed {seed}: fused at layer {} but brute force picks {} ({values:?})", out.fused.branch.r, best.0)
        })?;
    }
    Ok("identity_inputs=100x3 argmin_seeds=20".into())
}

/// FIFO link timelines against hand-built schedules.
pub fn comms_fifo() -> Check {
    let ideal =
        |bw: f64, proc_: f64, back: f64| LinkConfig { bandwidth: bw, processing_delay: proc_, backhaul_delay: back };
    // fixture 1: back-to-back packets, one of them created late
    let mut ch = Channel::new(ideal(100.0, 0.25, 0.0));
    let got: Vec<f64> = [(0.0, 100), (0.0, 50), (4.0, 100)]
        .iter()
        .map(|&(t, size)| ch.send(&mut Packet::new(NodeId::Robot(0), NodeId::Edge(0), size, t)))
        .collect();
    ensure(got == [1.25, 1.75, 5.25], || format!("fixture 1 delivered at {got:?}"))?;
    // fixture 2: three robots up then down through one edge, 0.5 s compute
    let comms = CommsConfig { edge: ideal(1000.0, 0.1, 0.0), ..CommsConfig::default() };
    let transfers: Vec<Transfer> =
        (0..3).map(|i| Transfer { robot: i, up_bytes: 500, down_bytes: 250, ready_at: 0.0, reachable: true }).collect();
    let ex = e2s(round_trip_model_exchange(&Topology::EdgeLsai { edge: 0 }, &comms, &transfers, 0.5))?;
    // up: [0,0.5] [0.5,1] [1,1.5] +0.1 -> last at 1.6; down created 2.1:
    // [2.1,2.35] [2.35,2.6] [2.6,2.85] +0.1
    let want = [2.45, 2.7, 2.95];
    for (i, w) in want.iter().enumerate() {
        let c = ex.completion[&(i as u32)];
        ensure((c - w).abs() < 1e-12, || format!("fixture 2 robot {i}: {c} != {w}"))?;
    }
    ensure(ex.total_bytes == 2250, || format!("fixture 2 bytes {}", ex.total_bytes))?;
    // fixture 3: cloud backhaul on a zero-size packet and on a full one
    let link = ideal(1e6, 0.05, 2.0);
    let (a, _) = transmit(&link, &Packet::new(NodeId::Robot(1), NodeId::Cloud, 0, 3.0), 0.0);
    let (b, busy) = transmit(&link, &Packet::new(NodeId::Robot(1), NodeId::Cloud, 1_000_000, 0.0), 0.5);
    ensure((a - 5.05).abs() < 1e-12 && (b - 3.55).abs() < 1e-12 && (busy - 1.5).abs() < 1e-12, || {
        format!("fixture 3 delivered at {a}, {b} (busy until {busy})")
    })?;
    let mut neighbors = BTreeMap::new();
    neighbors.insert(0u32, vec![1u32]);
    let peer = e2s(round_trip_model_exchange(&Topology::Distributed { neighbors }, &comms, &transfers[..2], 0.0))?;
    ensure(peer.total_bytes == 500, || format!("peer exchange moved {} bytes", peer.total_bytes))?;
    Ok("fixtures=3".into())
}

/// Energy spent equals idle drain plus per-metre cost on recorded runs.
pub fn energy() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut world = e2s(WorldState::spawn(&WorldConfig {
            arena_size: 100.0,
            n_robots: 5,
            obstacle_fraction: 0.1,
            seed,
            ..WorldConfig::default()
        }))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let cmds: Vec<Command> =
                (0..5).map(|_| Command { heading: rng.gen_range(-3.2..3.2), speed: rng.gen_range(0.0..2.0) }).collect();
            e2s(world.step(&cmds, 0.5))?;
        }
        let cfg = &world.config;
        for r in &world.robots {
            let ledger = cfg.idle_power * world.clock + cfg.move_energy * r.distance_traveled;
            let err = (r.energy_spent - ledger).abs();
            ensure(err <= 1e-9, || format!("seed {seed} robot {}: ledger off by {err:e}", r.id))?;
            ensure((cfg.initial_energy - r.energy - r.energy_spent).abs() <= 1e-9, || {
                format!("seed {seed} robot {}: remaining energy does not reconcile", r.id)
            })?;
            worst = worst.max(err);
        }
    }
    let mut sc = small_scenario();
    sc.experiment.rounds = 2;
    let out = e2s(run_method(Method::Lsai, &sc, 1, RunOptions::default()))?;
    let cfg = &out.world.config;
    for r in &out.world.robots {
        let err = (r.energy_spent - cfg.idle_power * out.world.clock - cfg.move_energy * r.distance_traveled).abs();
        ensure(err <= 1e-9, || format!("LSAI run robot {}: ledger off by {err:e}", r.id))?;
        worst = worst.max(err);
    }
    Ok(format!("runs=6 max_error={worst:e}"))
}

fn small_scenario() -> Scenario {
    let mut sc = Scenario::default();
    sc.world.arena_size = 100.0;
    sc.world.n_robots = 3;
    sc.world.n_targets = 5;
    sc.experiment.horizon_s = 40.0;
    sc.experiment.round_interval_s = 10.0;
    sc.experiment.rounds = 3;
    sc.ddpg.batch_size = 16;
    sc.fusion.branch_train_steps = 5;
    sc.splitting.fine_tune_steps = 5;
    sc
}

/// Every method twice with one seed: identical metrics and round reports.
pub fn determinism() -> Check {
    let sc = small_scenario();
    for m in Method::ALL {
        let a = e2s(run_method(m, &sc, 9, RunOptions::default()))?;
        let b = e2s(run_method(m, &sc, 9, RunOptions::default()))?;
        ensure(a.metrics == b.metrics && a.rounds == b.rounds && a.packets == b.packets, || {
            format!("{m}: two runs with seed 9 differ")
        })?;
    }
    Ok("methods=3".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_on_a_clean_build() {
        for s in SUITES {
            let r = run_suite(s, &VerifyOptions::default()).unwrap();
            assert!(r.passed, "{s}: {}", r.detail);
        }
    }

    #[test]
    fn a_corrupted_mask_bit_fails_the_prune_suite() {
        let r = run_suite("prune", &VerifyOptions { corrupt_mask_bit: true }).unwrap();
        assert!(!r.passed);
        assert!(run_suite("nope", &VerifyOptions::default()).is_none());
    }
}
