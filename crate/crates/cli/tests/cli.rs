use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn probres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probres"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = probres(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "--size", "gaze-l1", "--videos", "6", "--out", dir.to_str().unwrap()]);
}

#[test]
fn synth_then_run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    for f in ["labels.txt", "embeddings.emb", "graph.tsv", "videos.tsv", "features.emb", "experiment.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let spec = data.join("experiment.json");
    let mut csvs = Vec::new();
    for rep in ["a", "b"] {
        let out = tmp.path().join(rep);
        ok(&["run", "--spec", spec.to_str().unwrap(), "--seed", "0,1", "--output-dir", out.to_str().unwrap()]);
        let dir = out.join("synth-gaze-l1");
        assert!(dir.join("spec.json").exists());
        assert_eq!(fs::read_dir(dir.join("seed-1/trajectories")).unwrap().count(), 6);
        csvs.push((
            fs::read(dir.join("seed-0/aggregate.csv")).unwrap(),
            fs::read(dir.join("seed-1/aggregate.csv")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn synthetic_run_without_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&[
        "run", "--synthetic", "10x12", "--synthetic-videos", "3", "--strategy", "exhaustive", "--seed", "4",
        "--id", "tiny", "--output-dir", out, "--no-trajectories",
    ]);
    let csv = fs::read_to_string(tmp.path().join("tiny/seed-4/aggregate.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let calls = header.iter().position(|h| *h == "mean_distinct_calls").unwrap();
    assert_eq!(row[calls].parse::<f64>().unwrap(), 120.0);
    assert!(!tmp.path().join("tiny/seed-4/trajectories").exists());
}

#[test]
fn sweep_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&[
        "sweep", "--synthetic", "gaze-l1", "--synthetic-videos", "4", "--axis", "lambda", "--values", "0,0.5,1",
        "--seed", "0", "--id", "lam", "--output-dir", out, "--no-trajectories",
    ]);
    let csv = fs::read_to_string(tmp.path().join("lam/sweep-lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("axis_value,seed,"));
}

#[test]
fn eval_scores_a_saved_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("runs");
    ok(&[
        "run", "--spec", data.join("experiment.json").to_str().unwrap(), "--seed", "2", "--output-dir",
        out.to_str().unwrap(),
    ]);
    let seed_dir = out.join("synth-gaze-l1/seed-2");
    let report = tmp.path().join("report.json");
    let printed = ok(&[
        "eval",
        "--predictions",
        seed_dir.join("per_video.json").to_str().unwrap(),
        "--action-taxonomy",
        data.join("action_taxonomy.tsv").to_str().unwrap(),
        "--object-taxonomy",
        data.join("object_taxonomy.tsv").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(printed, fs::read_to_string(seed_dir.join("aggregate.csv")).unwrap());
    assert!(fs::read_to_string(report).unwrap().contains("wups_activity"));
}

#[test]
fn eval_reads_prediction_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("preds.tsv");
    fs::write(&preds, "v1\ttake\tcup\ttake\tcup\t10\nv2\tput\tcup\ttake\tcup\t30\n").unwrap();
    let printed = ok(&["eval", "--predictions", preds.to_str().unwrap()]);
    let mut lines = printed.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("exact_match"), 0.5);
    assert_eq!(col("mean_distinct_calls"), 20.0);
}

#[test]
fn import_kg_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("edges.tsv");
    fs::write(&dump, "cut\tUsedFor\tknife\t2.0\n# comment\nknife\tAtLocation\tkitchen\t1.0\n").unwrap();
    let json = tmp.path().join("graph.json");
    ok(&["import-kg", "--input", dump.to_str().unwrap(), "--output", json.to_str().unwrap()]);
    let text = fs::read_to_string(json).unwrap();
    assert!(text.contains("knife") && text.contains("UsedFor"));
}

#[test]
fn missing_seed_is_rejected() {
    let out = probres(&["run", "--synthetic", "gaze-l1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn bad_override_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = probres(&[
        "run", "--synthetic", "gaze-l1", "--seed", "0", "--set", "explore_lambda=2", "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}
