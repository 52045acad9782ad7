use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairtab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairtab"))
        .args(args)
        .env_remove("FAIRTAB_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fairtab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "folds": 2,
  "model": {"embed_dim": 4, "layers": 1, "heads": 2, "key_dim": 2, "value_dim": 2,
            "ff_hidden": 8, "head_hidden": [4]},
  "train": {"epochs": 2, "batch_size": 64}
}"#;

/// A 600-row default-profile dataset and a small run config.
fn setup(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--n",
        "600",
        "--seed",
        "3",
        "--out",
        s(&data),
        "--quiet",
    ]);
    let cfg = dir.join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    (s(&data.join("data.csv")).to_string(), s(&cfg).to_string())
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--n", "1000", "--seed", "7", "--out", s(&a)]);
    ok(&["synth", "--n", "1000", "--seed", "7", "--out", s(&b), "-q"]);
    let csv = fs::read(a.join("data.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("data.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("schema.json")).unwrap(),
        fs::read(b.join("schema.json")).unwrap()
    );
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1001);
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn synth_prevalences_match_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("big");
    ok(&[
        "synth",
        "--n",
        "20000",
        "--seed",
        "1",
        "--out",
        s(&out),
        "-q",
    ]);
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("schema.json")).unwrap()).unwrap();
    let text = fs::read_to_string(out.join("data.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let targets = [
        ("MALIGNANCY", 0.041),
        ("DIABETES", 0.10),
        ("REJECTION", 0.2377),
        ("INFECTION", 0.13),
        ("CARDIOVASCULAR", 0.18),
    ];
    assert_eq!(schema["tasks"].as_array().unwrap().len(), targets.len());
    for (task, p) in targets {
        let col = header.iter().position(|h| *h == task).unwrap();
        let pos = rows.iter().filter(|r| r[col] == "1").count();
        let rate = pos as f64 / rows.len() as f64;
        assert!((rate - p).abs() <= 0.01, "{task}: {rate} vs {p}");
    }
}

#[test]
fn train_eval_importance_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        s(&run),
        "--seed",
        "5",
    ]);
    assert!(stdout.lines().any(|l| l.contains("epoch 2")));
    for f in [
        "config.json",
        "splits.json",
        "epoch_log.csv",
        "report.json",
        "cdf.csv",
        "manifest.json",
        "checkpoints/fold1.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let eval = ok(&["eval", "--data", &data, "--run", s(&run)]);
    assert_eq!(eval.lines().count(), 5);
    assert!(run.join("eval/eval.csv").is_file());

    ok(&[
        "importance",
        "--data",
        &data,
        "--run",
        s(&run),
        "--identity",
        "--repetitions",
        "1",
        "-q",
    ]);
    let imp = fs::read_to_string(run.join("importance/importance.csv")).unwrap();
    let rows: Vec<&str> = imp.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 * 13);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("0")));

    ok(&["cdf", "--data", &data, "--run", s(&run), "-q"]);
    let cdf = fs::read_to_string(run.join("cdf/cdf.csv")).unwrap();
    let first: Vec<&str> = cdf
        .lines()
        .filter(|l| l.starts_with("MALIGNANCY,GENDER,M,"))
        .collect();
    assert_eq!(first.len(), 101);
    assert!(first[0].starts_with("MALIGNANCY,GENDER,M,0.00,"));
    assert!(first[100].starts_with("MALIGNANCY,GENDER,M,1.00,"));
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let run = |name: &str, method: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train",
            "--data",
            &data,
            "--config",
            &cfg,
            "--out",
            s(&out),
            "--method",
            method,
            "--alpha",
            "0",
            "-q",
        ]);
        fs::read(out.join("report.json")).unwrap()
    };
    let a = run("a", "multi-task");
    assert_eq!(a, run("b", "multi-task"));
    assert_eq!(a, run("c", "auroc-weighted"));
}

#[test]
fn config_errors_come_before_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = dir.path().join("never");
    let res = fairtab(&[
        "train",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--method",
        "auroc-weighted+DP",
    ]);
    assert_eq!(res.status.code(), Some(2));
    let rec: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(rec["error"], "config");
    assert_eq!(rec["field"], "train.fairness_attribute");
    assert!(!out.exists());

    let res = fairtab(&[
        "train",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--epochs",
        "0",
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());

    let res = Command::new(env!("CARGO_BIN_EXE_fairtab"))
        .args(["train", "--data", &data, "--config", &cfg, "--out", s(&out)])
        .env("FAIRTAB_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("FAIRTAB_THREADS"));

    let res = fairtab(&["train", "--data", &data, "--method", "multi-tsk"]);
    assert!(!res.status.success());
}

#[test]
fn compare_flags_pairing_and_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = dir.path().join("cmp");
    ok(&[
        "compare",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--folds",
        "1",
        "--methods",
        "multi-task,auroc-weighted",
        "--seeds",
        "1,2",
        "-q",
    ]);
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(table["paired"], true);
    assert!(table["rows"][0].get("reduction").is_none());
    assert!(table["rows"][1].get("reduction").is_some());

    // the Diff row is max-min of the emitted per-task means
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    for method in ["multi-task", "auroc-weighted"] {
        let rows: Vec<Vec<&str>> = csv
            .lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|r| r[0] == method)
            .collect();
        let means: Vec<f64> = rows
            .iter()
            .filter(|r| r[1] != "Diff" && r[1] != "reduction")
            .map(|r| r[2].parse().unwrap())
            .collect();
        let diff: f64 = rows.iter().find(|r| r[1] == "Diff").unwrap()[2]
            .parse()
            .unwrap();
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(diff, max - min);
    }
}
