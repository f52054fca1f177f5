use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn adcast(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_adcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn adcast");
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = adcast(dir, args);
    assert!(
        out.status.success(),
        "adcast {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn ok_owned(dir: &Path, args: &[String]) -> String {
    let v: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(dir, &v)
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

const DAY: &str = "86400";

fn make_corpus(dir: &Path, sub: &str, seed: &str) {
    ok(
        dir,
        &["synth", "--n-messages", "400", "--seed", seed, "--horizon", DAY, "--out-dir", sub],
    );
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    make_corpus(d, "a", "3");
    make_corpus(d, "b", "3");
    for f in ["events.jsonl", "releases.csv", "truth.csv", "synth.json"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    let truth = String::from_utf8(read(d.join("a/truth.csv"))).unwrap();
    assert!(truth.starts_with("id,release,q_max,expected_total,realized_total\n"));
    assert_eq!(truth.lines().count(), 401);

    let common = ["--events", "a/events.jsonl", "--releases", "a/releases.csv", "--horizon", DAY, "--granularity", "300"];
    for run in ["r1", "r2"] {
        let with = |extra: &[&str]| -> Vec<String> {
            common.iter().chain(extra).map(|s| s.to_string()).chain(["--out-dir".into(), run.into()]).collect()
        };
        ok_owned(d, &with(&["ingest"]));
        ok_owned(d, &with(&["fit"]));
        ok_owned(d, &with(&["train", "--t-known", "3600"]));
        ok_owned(d, &with(&["predict", "--model", &format!("{run}/model_ad.json"), "--with-truth"]));
        ok_owned(d, &with(&["evaluate", "--predictions", &format!("{run}/predictions.csv")]));
    }
    for f in [
        "binned.csv",
        "binned.json",
        "average.csv",
        "fit.json",
        "model_ad.json",
        "model_baseline.json",
        "train_ad.json",
        "predictions.csv",
        "eval_summary.json",
        "eval_messages.csv",
    ] {
        assert_eq!(read(d.join("r1").join(f)), read(d.join("r2").join(f)), "{f}");
    }

    let meta: serde_json::Value = serde_json::from_slice(&read(d.join("r1/binned.json"))).unwrap();
    assert_eq!(meta["n_messages"], 400);
    assert_eq!(meta["horizon_bins"], 288);
    let preds = String::from_utf8(read(d.join("r1/predictions.csv"))).unwrap();
    assert!(preds.starts_with("id,known_sum,predicted_total,real_total,ape,peak_class\n"));
    assert_eq!(preds.lines().count(), 101);
    let summary: serde_json::Value = serde_json::from_slice(&read(d.join("r1/eval_summary.json"))).unwrap();
    assert!(summary["summary"]["mape"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["tic_variant"], "standard");
}

#[test]
fn baseline_model_predicts_without_truth_columns() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    make_corpus(d, "c", "5");
    let common = ["--events", "c/events.jsonl", "--releases", "c/releases.csv", "--horizon", DAY, "--out-dir", "o"];
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["train", "--method", "baseline", "--t-known", "1800"]);
    ok(d, &args);
    assert!(!d.join("o/model_ad.json").exists());
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["predict", "--model", "o/model_baseline.json", "--subset", "all"]);
    ok(d, &args);
    let preds = String::from_utf8(read(d.join("o/predictions.csv"))).unwrap();
    assert!(preds.starts_with("id,known_sum,predicted_total\n"));
    assert_eq!(preds.lines().count(), 401);
    // no truth: evaluate refuses
    let out = adcast(d, &["evaluate", "--predictions", "o/predictions.csv", "--out-dir", "o"]);
    assert!(!out.status.success());
}

#[test]
fn sweep_writes_reports_and_report_rebuilds_them() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    make_corpus(d, "s", "7");
    let args = [
        "--events", "s/events.jsonl", "--releases", "s/releases.csv", "--horizon", DAY,
        "--granularity", "300,600", "--t-known", "1800,3600", "--out-dir", "sw", "sweep",
    ];
    ok(d, &args);
    let report = String::from_utf8(read(d.join("sw/report.csv"))).unwrap();
    assert!(report.starts_with("granularity_seconds,t_known_seconds,method,metric,value\n"));
    // 2 granularities x 2 windows x 2 methods x 13 metrics
    assert_eq!(report.lines().count(), 1 + 2 * 2 * 2 * 13);
    let manifest: serde_json::Value = serde_json::from_slice(&read(d.join("sw/failures.json"))).unwrap();
    assert_eq!(manifest["n_failed"], 0);

    ok(d, &["report", "--results", "sw/results.json", "--out-dir", "rep"]);
    for f in ["report.csv", "scatter.csv"] {
        let a = String::from_utf8(read(d.join("sw").join(f))).unwrap();
        let b = String::from_utf8(read(d.join("rep").join(f))).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn failed_cells_give_nonzero_exit_and_a_manifest() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    make_corpus(d, "f", "9");
    let out = adcast(
        d,
        &[
            "--events", "f/events.jsonl", "--releases", "f/releases.csv", "--horizon", DAY,
            "--granularity", "600", "--t-known", "300,3600", "--method", "ad", "--out-dir", "fo", "sweep",
        ],
    );
    assert!(!out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&read(d.join("fo/failures.json"))).unwrap();
    assert_eq!(manifest["n_failed"], 1);
    assert_eq!(manifest["failures"][0]["t_known_seconds"], 300);
    assert_eq!(manifest["failures"][0]["method"], "ad");
    // the healthy cell still reports
    let report = String::from_utf8(read(d.join("fo/report.csv"))).unwrap();
    assert!(report.lines().skip(1).all(|l| l.starts_with("600,3600,ad,")));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    make_corpus(d, "k", "11");
    std::fs::write(
        d.join("run.toml"),
        "events = \"k/events.jsonl\"\nreleases = \"k/releases.csv\"\nhorizon = 86400\ngranularity = 600\nt_known = 3600\nout_dir = \"from_file\"\nmethod = \"baseline\"\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "train"]);
    let profile: serde_json::Value = serde_json::from_slice(&read(d.join("from_file/model_baseline.json"))).unwrap();
    assert_eq!(profile["granularity_seconds"], 600);
    assert_eq!(profile["t1_bins"], 6);
    ok(d, &["--config", "run.toml", "train", "--granularity", "300", "--out-dir", "from_flags"]);
    let profile: serde_json::Value = serde_json::from_slice(&read(d.join("from_flags/model_baseline.json"))).unwrap();
    assert_eq!(profile["granularity_seconds"], 300);
    assert_eq!(profile["t1_bins"], 12);
}

#[test]
fn zero_based_csv_input() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("e.csv"), "id,t\na,0\na,59.5\na,60\nb,125\n").unwrap();
    ok(d, &["--events", "e.csv", "--zero-based", "--granularity", "60", "--horizon", "120", "ingest"]);
    assert_eq!(String::from_utf8(read(d.join("binned.csv"))).unwrap(), "id,bin,count\na,1,2\na,2,1\n");
    let meta: serde_json::Value = serde_json::from_slice(&read(d.join("binned.json"))).unwrap();
    assert_eq!(meta["excluded_post_horizon"], 1);
    assert_eq!(meta["n_messages"], 2);
}

#[test]
fn helpful_errors() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    let out = adcast(d, &["ingest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--events"));
    let out = adcast(d, &["--tic-variant", "nope", "ingest"]);
    assert!(!out.status.success());
}
