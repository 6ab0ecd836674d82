mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use muffin::data::SplitName;
use muffin::report::{
    baseline_csv, breakdown_csv, history_csv, parse_baseline_csv, parse_breakdown_csv, parse_history_csv,
};

fn muffin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muffin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_the_search_flags() {
    let o = muffin(&["search", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in [
        "--episodes",
        "--n-select",
        "--depths",
        "--widths",
        "--activations",
        "--pin-model",
        "--proxy-mode",
        "--objectives",
        "--seed",
        "--workers",
        "--out",
        "--data",
        "--config",
    ] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
    let top = stdout(&muffin(&["--help"]));
    for cmd in ["synth", "metrics", "search", "oracle"] {
        assert!(top.contains(cmd));
    }
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = muffin(&["synth", "--seed", "5", "--out", path(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("wrote 5 files"));
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for f in ["dataset.csv", "schema.json", "pool.json"] {
        assert!(names.iter().any(|n| n == f));
    }
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
}

#[test]
fn infeasible_synth_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = muffin(&["synth", "--complementarity", "1.2", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible"));
    let o = muffin(&["synth", "--preset", "nope", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = muffin(&["metrics", "--data", path(&dir.path().join("absent")), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

/// Eight samples. On the four `old` ones the two models hit each
/// right/wrong combination once; on `young` both are always right.
fn write_fixture(dir: &Path) {
    let labels = vec![0; 8];
    let groups: Vec<Vec<usize>> = (0..8).map(|i| vec![(i >= 4) as usize]).collect();
    let mut ds = common::dataset(&[2], 2, &labels, &groups);
    ds.schema.attributes[0].name = "age".into();
    ds.schema.attributes[0].groups = vec!["young".into(), "old".into()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = vec![0, 0, 0, 0, 1, 0, 1, 0];
    let b = vec![0, 0, 0, 0, 1, 1, 0, 0];
    let pool = common::oracles::pool_from_predictions(&mut rng, &ds, &[a, b]);
    ds.write(&dir.join("dataset.csv"), &dir.join("schema.json")).unwrap();
    pool.write(&ds, &dir.join("pool.json")).unwrap();
}

#[test]
fn metrics_on_hand_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let out = dir.path().join("out");
    let o = muffin(&[
        "metrics",
        "--data",
        path(dir.path()),
        "--out",
        path(&out),
        "--breakdown-split",
        "all",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let baseline = fs::read_to_string(out.join("baseline_metrics.csv")).unwrap();
    let rows = parse_baseline_csv(&baseline).unwrap();
    assert_eq!(baseline_csv(&rows, &["age".into()]).unwrap(), baseline);
    for model in ["m0", "m1"] {
        let r = rows.iter().find(|r| r.model == model && r.split == SplitName::All).unwrap();
        // young 1.0, old 0.5, overall 0.75
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.unfairness["age"], 0.5);
        assert_eq!(r.reward, 1.5);
    }

    let breakdown = fs::read_to_string(out.join("breakdown.csv")).unwrap();
    let rows = parse_breakdown_csv(&breakdown).unwrap();
    assert_eq!(breakdown_csv(&rows).unwrap(), breakdown);
    let old = rows.iter().find(|r| r.group == "old").expect("old group flagged");
    assert_eq!(old.count, 4);
    assert_eq!([old.both_wrong, old.only_a, old.only_b, old.both_right], [0.25; 4]);
    assert!(rows.iter().all(|r| r.group != "young"));
}

fn synth_into(dir: &Path) {
    let o = muffin(&["synth", "--seed", "2", "--out", path(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.join("fast.json"), r#"{"head_epochs": 5, "checkpoint_every": 5}"#).unwrap();
}

fn search_args<'a>(data: &'a str, config: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "search", "--data", data, "--config", config, "--out", out, "--episodes", "12", "--depths", "1",
        "--widths", "8,16", "--activations", "relu,tanh", "--seed", "4", "--workers", "1",
    ]
}

#[test]
fn search_replays_byte_identically_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    let data = path(dir.path()).to_string();
    let config = path(&dir.path().join("fast.json")).to_string();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = muffin(&search_args(&data, &config, path(out)));
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("best episode"));
    }
    let history = fs::read(a.join("history.csv")).unwrap();
    assert_eq!(history, fs::read(b.join("history.csv")).unwrap());
    for f in ["pareto.csv", "best.json", "controller.json", "checkpoints/controller.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }

    let text = String::from_utf8(history).unwrap();
    let rows = parse_history_csv(&text).unwrap();
    assert_eq!(rows.len(), 12);
    let attrs = vec!["age".to_string(), "site".to_string()];
    assert_eq!(history_csv(&rows, &attrs).unwrap(), text);
    let pareto = fs::read_to_string(a.join("pareto.csv")).unwrap();
    assert_eq!(history_csv(&parse_history_csv(&pareto).unwrap(), &attrs).unwrap(), pareto);

    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("best.json")).unwrap()).unwrap();
    let top = rows.iter().map(|r| r.reward).fold(f64::MIN, f64::max);
    assert_eq!(best["reward"].as_f64().unwrap(), top);
}

#[test]
fn pinned_model_appears_in_every_row() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    let data = path(dir.path()).to_string();
    let config = path(&dir.path().join("fast.json")).to_string();
    let out = dir.path().join("pin");
    let mut args = search_args(&data, &config, path(&out));
    args.extend(["--pin-model", "densenet121-sim"]);
    let o = muffin(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_history_csv(&fs::read_to_string(out.join("history.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.selected_models.iter().any(|m| m == "densenet121-sim")));

    let mut args = search_args(&data, &config, path(&out));
    args.extend(["--pin-model", "no-such-model"]);
    assert_eq!(muffin(&args).status.code(), Some(1));
}

#[test]
fn oracle_guard_and_dominance() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    let data = path(dir.path()).to_string();
    let config = path(&dir.path().join("fast.json")).to_string();

    let o = muffin(&["oracle", "--data", &data, "--out", path(dir.path()), "--depths", "1,2,3,4"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("structures"), "{}", stderr(&o));
    let count: u128 = stderr(&o)
        .split_whitespace()
        .find_map(|w| w.parse().ok())
        .expect("count printed");
    assert!(count > 10_000);

    let out = dir.path().join("o");
    let mut args = search_args(&data, &config, path(&out));
    args[0] = "oracle";
    let o = muffin(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("4 structures"));
    let oracle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("oracle_best.json")).unwrap()).unwrap();
    assert_eq!(oracle["evaluated"], 4);

    let o = muffin(&search_args(&data, &config, path(&out)));
    assert!(o.status.success());
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("best.json")).unwrap()).unwrap();
    assert!(oracle["reward"].as_f64().unwrap() >= best["reward"].as_f64().unwrap());
}
