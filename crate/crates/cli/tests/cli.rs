use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uplift-rank"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("UPLIFT_RANK_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn experiment_config(dir: &Path, out: &Path, l2: f64) -> PathBuf {
    let cfg = serde_json::json!({
        "data": {"kind": "synthetic", "n": 1500, "d": 3, "treat_prob": 0.5,
                 "coef_base": [0.5, -0.3, 0.2], "coef_uplift": [0.8, 0.0, -0.4],
                 "base_intercept": -1.5, "uplift_intercept": 0.2, "seed": 1},
        "methods": ["auuc-max", "tm"],
        "num_splits": 3,
        "output_dir": out,
        "ranker_grid": {"lambda_grid": [1.0], "lr_grid": [0.01], "template": {"epochs": 15}},
        "tm_grid": {"lr_grid": [0.1], "l2_grid": [l2], "template": {"epochs": 15}},
        "bound_gap": {"num_splits_for_mean": 20}
    });
    let path = dir.join(format!("cfg_{l2}.json"));
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn generate(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    ok(&[
        "generate",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--output",
        s(&path),
    ]);
    path
}

const HILLSTROM_HEADER: &str =
    "recency,history_segment,history,mens,womens,zip_code,newbie,channel,segment,visit,conversion,spend";

#[test]
fn prepare_encodes_hillstrom_layout() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from(HILLSTROM_HEADER);
    text.push('\n');
    let segments = ["Womens E-Mail", "Mens E-Mail", "No E-Mail"];
    for i in 0..12 {
        text.push_str(&format!(
            "{},\"2) $100 - $200\",{}.5,{},{},{},{},{},{},{},0,0\n",
            1 + i % 12,
            100 + 10 * i,
            i % 2,
            (i + 1) % 2,
            ["Urban", "Surburban", "Rural"][i % 3],
            i % 2,
            ["Web", "Phone", "Multichannel"][i % 3],
            segments[i % 3],
            i % 2
        ));
    }
    fs::write(&raw, text).unwrap();
    let out = dir.path().join("enc.csv");
    ok(&["prepare", "--input", s(&raw), "--output", s(&out)]);
    let enc = fs::read_to_string(&out).unwrap();
    let header = enc.lines().next().unwrap();
    assert!(header.ends_with("treatment,outcome"), "{header}");
    // men's-email rows are dropped
    assert_eq!(enc.lines().count() - 1, 8);
}

#[test]
fn train_evaluate_bound_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = generate(dir.path(), "train.csv", 2000, 3);
    let test = generate(dir.path(), "test.csv", 1000, 4);
    let model_dir = dir.path().join("model");
    ok(&[
        "train",
        "--data",
        s(&train),
        "--lambda",
        "0.5,1",
        "--lr",
        "0.01",
        "--epochs",
        "10",
        "--output-dir",
        s(&model_dir),
    ]);
    for f in ["model.json", "selection.json", "grid.csv", "training_log.csv"] {
        assert!(model_dir.join(f).exists(), "missing {f}");
    }
    let model = model_dir.join("model.json");
    let eval_dir = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&test),
        "--output-dir",
        s(&eval_dir),
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let auuc = metrics["auuc"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&auuc));
    assert!(eval_dir.join("uplift_curve.csv").exists());

    let bound_path = dir.path().join("bound.json");
    ok(&[
        "bound",
        "--model",
        s(&model),
        "--data",
        s(&model_dir.join("train.csv")),
        "--output",
        s(&bound_path),
    ]);
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(&bound_path).unwrap()).unwrap();
    let recomputed = b["gamma"].as_f64().unwrap()
        - b["lambda_t"].as_f64().unwrap() * b["risk_t"].as_f64().unwrap()
        - b["lambda_c"].as_f64().unwrap() * b["risk_c"].as_f64().unwrap()
        - b["c_delta"].as_f64().unwrap()
        - b["tail"].as_f64().unwrap();
    assert!((recomputed - b["lower_bound"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn baselines_train_and_refuse_bound() {
    let dir = tempfile::tempdir().unwrap();
    let train = generate(dir.path(), "train.csv", 1500, 5);
    for method in ["tm", "cvt"] {
        let out = dir.path().join(method);
        ok(&[
            "train",
            "--data",
            s(&train),
            "--method",
            method,
            "--epochs",
            "10",
            "--output-dir",
            s(&out),
        ]);
        let model = out.join("model.json");
        let r = run(&["bound", "--model", s(&model), "--data", s(&train)]);
        assert_eq!(r.status.code(), Some(2), "bound on {method}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["train", "--data", "does-not-exist.csv", "--output-dir", s(dir.path())])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    let train = generate(dir.path(), "train.csv", 500, 6);
    let r = run(&[
        "train",
        "--data",
        s(&train),
        "--lambda",
        "-1",
        "--output-dir",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let bad = experiment_config(dir.path(), &dir.path().join("bad"), -1.0);
    let r = run(&["experiment", "splits", "--config", s(&bad), "--methods", "tm"]);
    assert_eq!(r.status.code(), Some(4));
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "f0,treatment,outcome\n1.0,2,0\n").unwrap();
    let r = run(&[
        "evaluate",
        "--model",
        s(&garbage),
        "--data",
        s(&garbage),
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(r.status.code(), Some(3));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "timings.csv")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn experiment_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = experiment_config(dir.path(), &a, 0.0);
    ok(&["--jobs", "1", "experiment", "splits", "--config", s(&cfg)]);
    ok(&[
        "--jobs",
        "2",
        "experiment",
        "splits",
        "--config",
        s(&cfg),
        "--output-dir",
        s(&b),
    ]);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for ((na, ca), (nb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na != "config.json" {
            assert!(ca == cb, "{na} differs");
        }
    }
}

#[test]
fn experiment_resumes_to_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let resumed = dir.path().join("resumed");
    let cfg = experiment_config(dir.path(), &full, 0.0);
    ok(&["experiment", "splits", "--config", s(&cfg)]);
    // interrupted run: only two of the three splits completed
    ok(&[
        "experiment",
        "splits",
        "--config",
        s(&cfg),
        "--output-dir",
        s(&resumed),
        "--num-splits",
        "2",
    ]);
    ok(&["experiment", "splits", "--config", s(&cfg), "--output-dir", s(&resumed)]);
    assert_eq!(
        fs::read(full.join("rows.csv")).unwrap(),
        fs::read(resumed.join("rows.csv")).unwrap()
    );
    assert_eq!(
        fs::read(full.join("aggregate.json")).unwrap(),
        fs::read(resumed.join("aggregate.json")).unwrap()
    );
    ok(&["verify", "--dir", s(&resumed)]);

    // tampering with the aggregate is detected
    let agg = resumed.join("aggregate.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&agg).unwrap()).unwrap();
    v["methods"][0]["mean_test_auuc"] = serde_json::json!(0.987);
    fs::write(&agg, v.to_string()).unwrap();
    assert_ne!(run(&["verify", "--dir", s(&resumed)]).status.code(), Some(0));
}

#[test]
fn bound_gap_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gap");
    let cfg = experiment_config(dir.path(), &out, 0.0);
    ok(&["experiment", "bound-gap", "--config", s(&cfg), "--num-splits", "2"]);
    for f in ["gap_rows.csv", "gap_histogram.csv", "gap_summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}
