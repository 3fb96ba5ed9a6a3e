//! Drives the `mtens` binary end to end on the small fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn mtens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtens"))
        .args(args)
        .env_remove("MTENS_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Common flags for a run on the emotion-intensity fixture.
fn fixture_args(out: &Path) -> Vec<String> {
    let f = fixtures();
    vec![
        "--data".into(),
        f.join("emoint_fixture.tsv").display().to_string(),
        "--embeddings".into(),
        f.join("embeddings_fixture.txt").display().to_string(),
        "--out".into(),
        out.display().to_string(),
        "--seed".into(),
        "1".into(),
    ]
}

fn run_in(out: &Path, command: &[&str], extra: &[&str]) -> Output {
    let mut args: Vec<String> = command.iter().map(|s| s.to_string()).collect();
    args.extend(fixture_args(out));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mtens(&refs)
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        stderr(out)
    );
}

#[test]
fn one_epoch_writes_one_history_row() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(
        dir.path(),
        &["train-base", "--encoder", "gru"],
        &["--epochs", "1"],
    ));
    let history = fs::read_to_string(dir.path().join("gru.history.tsv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 2, "{history}");
    assert!(lines[0].starts_with("epoch\t"));
    assert!(lines[1].starts_with("1\t"));
    assert!(dir.path().join("gru.ckpt").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        assert_ok(&run_in(
            dir,
            &["train-base", "--encoder", "cnn"],
            &["--epochs", "2"],
        ));
        assert_ok(&run_in(dir, &["extract", "--encoder", "cnn"], &[]));
    }
    for file in [
        "cnn.history.tsv",
        "cnn.reps.tsv",
        "cnn.predictions.tsv",
        "cnn.ckpt",
    ] {
        let left = fs::read(a.path().join(file)).unwrap();
        let right = fs::read(b.path().join(file)).unwrap();
        assert!(left == right, "{file} differs between identical runs");
    }
    let reps = fs::read_to_string(a.path().join("cnn.reps.tsv")).unwrap();
    assert_eq!(reps.lines().count(), 60);
    assert_eq!(reps.lines().next().unwrap().split('\t').count(), 129);
}

#[test]
fn fixture_training_finishes_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run_in(dir.path(), &["train-base", "--encoder", "lstm"], &[]);
    let took = start.elapsed();
    assert_ok(&out);
    assert!(took < Duration::from_secs(60), "took {took:?}");
    assert!(
        stdout(&out).contains("intensity.pearson="),
        "{}",
        stdout(&out)
    );
}

#[test]
fn full_pipeline_and_missing_representation() {
    let dir = tempfile::tempdir().unwrap();
    for enc in ["lstm", "cnn", "gru"] {
        assert_ok(&run_in(
            dir.path(),
            &["train-base", "--encoder", enc],
            &["--epochs", "1"],
        ));
        assert_ok(&run_in(dir.path(), &["extract", "--encoder", enc], &[]));
    }
    let ens = run_in(
        dir.path(),
        &["train-ensemble", "--dependent"],
        &["--epochs", "2"],
    );
    assert_ok(&ens);
    assert!(stdout(&ens).contains("emotion.accuracy="));
    let preds = dir.path().join("ensemble.predictions.tsv");
    assert!(preds.exists());

    // the test-split predictions score against a file holding only that split's rows
    let gold_all = fs::read_to_string(fixtures().join("emoint_fixture.tsv")).unwrap();
    let pred_ids: std::collections::HashSet<String> = fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    let mut lines = gold_all.lines();
    let mut gold = format!("{}\n", lines.next().unwrap());
    for l in lines.filter(|l| pred_ids.contains(l.split('\t').next().unwrap())) {
        gold.push_str(l);
        gold.push('\n');
    }
    let gold_path = dir.path().join("test_gold.tsv");
    fs::write(&gold_path, gold).unwrap();
    let eval = mtens(&[
        "evaluate",
        "--predictions",
        preds.to_str().unwrap(),
        "--gold",
        gold_path.to_str().unwrap(),
        "--dependent",
    ]);
    assert_ok(&eval);
    assert!(stdout(&eval).contains("intensity.pearson="));

    // drop one id from the GRU dump
    let reps_path = dir.path().join("gru.reps.tsv");
    let reps = fs::read_to_string(&reps_path).unwrap();
    let dropped = reps
        .lines()
        .next()
        .unwrap()
        .split('\t')
        .next()
        .unwrap()
        .to_string();
    let kept: String = reps.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&reps_path, kept).unwrap();
    let out = run_in(dir.path(), &["train-ensemble"], &["--epochs", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains(&dropped), "{}", stderr(&out));
}

#[test]
fn confusion_fixture_accuracy() {
    let f = fixtures();
    let out = mtens(&[
        "evaluate",
        "--predictions",
        f.join("confusion_predictions.tsv").to_str().unwrap(),
        "--gold",
        f.join("confusion_gold.tsv").to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = stdout(&out);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("emotion.accuracy="))
        .expect("accuracy line")
        .parse()
        .unwrap();
    assert!((acc - 2824.0 / 3142.0).abs() < 1e-12, "{acc}");
    assert!(format!("{acc:.4}") == "0.8988");
}

#[test]
fn data_root_resolves_relative_inputs() {
    let out = Command::new(env!("CARGO_BIN_EXE_mtens"))
        .args([
            "evaluate",
            "--predictions",
            "confusion_predictions.tsv",
            "--data",
            "confusion_gold.tsv",
        ])
        .env("MTENS_DATA_ROOT", fixtures())
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(stdout(&out).contains("emotion.accuracy=0.8987"));
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtens(&[
        "train-base",
        "--encoder",
        "gru",
        "--data",
        "/nonexistent/data.tsv",
        "--embeddings",
        "/nonexistent/emb.txt",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"));

    let out = mtens(&["train-base", "--encoder", "gru"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--data"));
}

#[test]
fn config_file_supplies_settings() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "data = {}\nembeddings = {}\nout = {}\nepochs = 1\nseed = 4\n",
            f.join("emoint_fixture.tsv").display(),
            f.join("embeddings_fixture.txt").display(),
            dir.path().display()
        ),
    )
    .unwrap();
    let out = mtens(&[
        "train-base",
        "--encoder",
        "gru",
        "--config",
        conf.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let history = fs::read_to_string(dir.path().join("gru.history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    fs::write(&conf, "learning_rate = 0.1\n").unwrap();
    let out = mtens(&[
        "train-base",
        "--encoder",
        "gru",
        "--config",
        conf.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning-rate"));
}
