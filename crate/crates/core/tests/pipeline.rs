use std::path::PathBuf;

use lsai::config::Scenario;
use lsai::experiment::{run_method, summarize, sweep, Method, RunOptions, SweepSpec};

fn scenario_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn small() -> Scenario {
    let mut sc = Scenario::default();
    sc.world.arena_size = 100.0;
    sc.world.n_robots = 4;
    sc.world.n_targets = 6;
    sc.experiment.horizon_s = 60.0;
    sc.experiment.round_interval_s = 15.0;
    sc.experiment.rounds = 3;
    sc.ddpg.batch_size = 32;
    sc.fusion.branch_train_steps = 10;
    sc.splitting.fine_tune_steps = 5;
    sc
}

#[test]
fn committed_scenarios_load_and_desk_matches_defaults() {
    let desk = Scenario::load(&scenario_file("desk.toml")).unwrap();
    assert_eq!(desk, Scenario::default());
    let full = Scenario::load(&scenario_file("full.toml")).unwrap();
    assert_eq!(full.world.arena_size, 3000.0);
    assert_eq!(full.world.n_robots, 60);
    assert!((30..=50).contains(&full.world.n_targets));
    assert_eq!(full.ddpg.hidden, vec![64, 64, 64]);
}

#[test]
fn metrics_stay_in_bounds_and_censoring_is_consistent() {
    let sc = small();
    for m in Method::ALL {
        for seed in 0..3 {
            let out = run_method(m, &sc, seed, RunOptions::default()).unwrap();
            let x = out.metrics;
            assert!((0.0..=1.0).contains(&x.sensing_accuracy), "{m} {seed}: {x:?}");
            assert!((0.0..=1.0).contains(&x.path_efficiency), "{m} {seed}: {x:?}");
            assert!(x.energy_total.is_finite() && x.energy_total > 0.0);
            if x.sensing_accuracy < sc.experiment.response_threshold {
                assert!(x.censored() && x.response_time.is_infinite(), "{m} {seed}: {x:?}");
            } else {
                assert!(x.response_time <= sc.experiment.horizon_s);
            }
            let logged: u64 = out.packets.iter().map(|p| p.packet.size as u64).sum();
            assert_eq!(logged, x.bytes_transmitted, "{m} {seed}");
            assert_eq!(out.rounds.len(), sc.experiment.rounds);
        }
    }
}

#[test]
fn sweep_rows_do_not_depend_on_worker_count() {
    let sc = small();
    let mut spec = SweepSpec {
        name: "small".into(),
        methods: Method::ALL.to_vec(),
        robot_counts: vec![2, 3],
        seeds: vec![0, 1],
        jobs: 1,
        timing: false,
    };
    let serial = sweep(&sc, &spec).unwrap();
    spec.jobs = 3;
    let parallel = sweep(&sc, &spec).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.len(), 12);
    let cells = summarize(&serial, sc.experiment.horizon_s);
    assert_eq!(cells.len(), 6);
    assert!(cells.iter().all(|c| c.runs == 2 && c.failed == 0));
}

#[test]
fn lsai_rounds_carry_attention_weights_and_fused_branches() {
    let out = run_method(Method::Lsai, &small(), 4, RunOptions::default()).unwrap();
    for r in &out.rounds {
        let total: f64 = r.attention_weights.iter().map(|w| w.1).sum();
        assert!((total - 1.0).abs() < 1e-9, "round {}: weights sum {total}", r.round);
        assert_eq!(r.branches.len(), r.participants.len());
        assert!(r.branches.iter().all(|b| (1..=3).contains(&b.1)));
        assert!(r.completion_s.iter().all(|c| c.1 >= r.time_s));
    }
}
