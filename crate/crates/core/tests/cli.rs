use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[world]
arena_size = 60.0
n_robots = 3
n_targets = 4

[ddpg]
batch_size = 16

[fusion]
branch_train_steps = 5

[splitting]
fine_tune_steps = 5

[experiment]
horizon_s = 20.0
round_interval_s = 5.0
rounds = 3
"#;

fn lsai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsai")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_to(config: &Path, method: &str, seed: &str, out: &Path) -> Output {
    lsai(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--method",
        method,
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn run_writes_all_outputs_and_repeats_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run_to(&cfg, "LSAI", "3", out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("method=LSAI seed=3 n_robots=3"));
    }
    for f in ["results.csv", "rounds.jsonl", "packets.csv", "trace.txt"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        assert_eq!(x, y, "{f} differs between runs");
    }
    let rows = csv_rows(&a.join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "tiny-r3-s3");
    assert_eq!(fs::read_to_string(a.join("rounds.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[wrold]\nsize = 100.0\n");
    let o = run_to(&cfg, "LSAI", "0", &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("wrold.size"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_and_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[world]\nsensing_radius = -1.0\n");
    let o = run_to(&bad, "LSAI", "0", &dir.path().join("o1"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("world.sensing_radius"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert_eq!(run_to(&cfg, "Telepathy", "0", &dir.path().join("o2")).status.code(), Some(2));
    assert_eq!(lsai(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(lsai(&[]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(run_to(&missing, "LSAI", "0", &dir.path().join("o3")).status.code(), Some(2));
    assert_eq!(lsai(&["--help"]).status.code(), Some(0));
}

#[test]
fn lsai_and_centralized_move_different_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let mut bytes = Vec::new();
    for m in ["LSAI", "Centralized"] {
        let out = dir.path().join(m);
        assert_eq!(run_to(&cfg, m, "1", &out).status.code(), Some(0));
        let rows = csv_rows(&out.join("results.csv"));
        bytes.push(rows[0][11].parse::<u64>().unwrap());
        let log = csv_rows(&out.join("packets.csv"));
        let total: u64 = log.iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
        assert_eq!(total, bytes[bytes.len() - 1], "{m}: packet log does not add up to bytes_transmitted");
    }
    assert!(bytes[0] > 0 && bytes[1] > 0);
    assert_ne!(bytes[0], bytes[1]);
}

fn sweep_to(cfg: &Path, robots: &str, seeds: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--robots",
        robots,
        "--seeds",
        seeds,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    lsai(&args)
}

#[test]
fn full_grid_has_ninety_rows_and_means_match_the_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("grid");
    let o = sweep_to(&cfg, "2,3,4", "10", &out, &["--method", "all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("rows=90 failed=0"));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 90);
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 9);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 9);
    for cell in &summary {
        let (method, n) = (&cell[0], &cell[1]);
        let acc: Vec<f64> =
            rows.iter().filter(|r| &r[1] == method && &r[2] == n).map(|r| r[5].parse().unwrap()).collect();
        assert_eq!(acc.len(), 10);
        let mean = acc.iter().sum::<f64>() / 10.0;
        let reported: f64 = cell[5].parse().unwrap();
        assert!((mean - reported).abs() < 1e-12, "{method} r{n}: {mean} vs {reported}");
    }
}

#[test]
fn one_cell_sweep_gives_one_row_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("one");
    let o = sweep_to(&cfg, "3", "1", &out, &["--method", "distributed"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("results.csv")).len(), 1);
    assert_eq!(csv_rows(&out.join("summary.csv")).len(), 1);
}

#[test]
fn empty_robot_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert_eq!(sweep_to(&cfg, "", "2", &dir.path().join("x"), &[]).status.code(), Some(2));
    assert_eq!(sweep_to(&cfg, "4,x", "2", &dir.path().join("y"), &[]).status.code(), Some(2));
}

#[test]
fn sweep_where_every_run_fails_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("fail");
    // far more robots than free cells: placement fails in every run
    let o = sweep_to(&cfg, "5000", "2", &out, &["--method", "LSAI"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[8] == "failed" && r[5].is_empty()));
}

#[test]
fn verify_reports_each_suite_and_catches_a_corrupted_mask() {
    let o = lsai(&["verify", "--suite", "jaccard", "--suite", "softmax"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("suite=softmax status=pass"));
    assert!(text.contains("suite=jaccard status=pass"));
    let o = lsai(&["verify", "--suite", "prune", "--corrupt-mask-bit"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("suite=prune status=fail"));
    assert_eq!(lsai(&["verify", "--suite", "astrology"]).status.code(), Some(2));
}

#[test]
fn replay_accepts_own_trace_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    // a wide arena, so a moved robot lands on cells nobody has seen yet
    let wide = TINY.replace("arena_size = 60.0", "arena_size = 200.0");
    let cfg = write_config(dir.path(), "wide.toml", &wide);
    let out = dir.path().join("run");
    assert_eq!(run_to(&cfg, "Distributed", "2", &out).status.code(), Some(0));
    let trace = out.join("trace.txt");
    let o = lsai(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("replay status=ok"));

    let text = fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines.iter().position(|l| l.starts_with("tick 7 ")).unwrap();
    let truncated = dir.path().join("truncated.txt");
    fs::write(&truncated, lines[..cut].join("\n") + "\n").unwrap();
    let o = lsai(&["replay", "--trace", truncated.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tick 7"), "{}", stderr(&o));

    let tick1 = lines.iter().position(|l| l.starts_with("tick 1 ")).unwrap();
    let idx = (tick1..lines.len()).find(|&i| lines[i].starts_with("robot 0 ")).unwrap();
    let mut edited: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    let mut f: Vec<String> = lines[idx].split_whitespace().map(String::from).collect();
    for k in [2, 3] {
        let v: f64 = f[k].parse().unwrap();
        f[k] = format!("{}", 200.0 - v);
    }
    edited[idx] = f.join(" ");
    let tampered = dir.path().join("tampered.txt");
    fs::write(&tampered, edited.join("\n") + "\n").unwrap();
    let o = lsai(&["replay", "--trace", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coverage mismatch"), "{}", stderr(&o));
}
