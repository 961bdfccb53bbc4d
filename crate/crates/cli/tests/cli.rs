use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn swan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn ok(args: &[&str]) -> String {
    let out = swan(args);
    assert!(
        out.status.success(),
        "swan {args:?} failed:\n{}\n{}",
        text(&out.stdout),
        text(&out.stderr)
    );
    text(&out.stdout)
}

fn fail(args: &[&str]) -> String {
    let out = swan(args);
    assert!(!out.status.success(), "swan {args:?} unexpectedly succeeded");
    text(&out.stderr)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// 100 short samples with a generous minority so every small fold holds
/// both classes.
fn small_dataset(dir: &Path) {
    ok(&[
        "gen-data", "--out", p(dir), "--subjects", "10", "--per-subject", "10",
        "--minority", "0.3", "--min-len", "160", "--max-len", "240",
    ]);
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).expect("csv exists").lines().count() - 1
}

#[test]
fn gen_data_reports_counts_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stdout = ok(&["gen-data", "--out", p(&a), "--subjects", "5", "--per-subject", "8"]);
    assert!(stdout.contains("generated 40 samples from 5 subjects"), "{stdout}");
    assert!(stdout.contains("label 0 (insufficient trust): 6"), "{stdout}");
    ok(&["gen-data", "--out", p(&b), "--subjects", "5", "--per-subject", "8"]);
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "manifest.csv"), read(&b, "manifest.csv"));
    assert_eq!(read(&a, "series/S03-005.csv"), read(&b, "series/S03-005.csv"));
    assert_eq!(csv_rows(&a.join("manifest.csv")), 40);
}

#[test]
fn invalid_minority_names_the_flag() {
    let tmp = TempDir::new().unwrap();
    let err = fail(&["gen-data", "--out", p(tmp.path()), "--minority", "1.5"]);
    assert!(err.contains("--minority"), "{err}");
    assert!(!tmp.path().join("manifest.csv").exists());
}

#[test]
fn missing_dataset_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere");
    let err = fail(&["train", "--data", p(&missing), "--out", p(tmp.path())]);
    assert!(err.contains("dataset not found"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("gen.conf");
    fs::write(&cfg, "# small set\nsubjects = 6\nper_subject = 5\nseed = 4\n").unwrap();
    let out = tmp.path().join("data");
    let stdout = ok(&["gen-data", "--config", p(&cfg), "--out", p(&out), "--subjects", "7"]);
    assert!(stdout.contains("generated 35 samples from 7 subjects"), "{stdout}");
    let echoed = fs::read_to_string(out.join("effective_config.txt")).unwrap();
    assert!(echoed.contains("subjects = 7"), "{echoed}");
    assert!(echoed.contains("per-subject = 5"), "{echoed}");
    assert!(echoed.contains("seed = 4"), "{echoed}");

    // The echoed file reproduces the run.
    let again = tmp.path().join("again");
    let stdout = ok(&["gen-data", "--config", p(&out.join("effective_config.txt")), "--out", p(&again)]);
    assert!(stdout.contains("generated 35 samples"), "{stdout}");
    assert_eq!(
        fs::read(out.join("manifest.csv")).unwrap(),
        fs::read(again.join("manifest.csv")).unwrap()
    );

    fs::write(&cfg, "subjects = 6\nwindow = 3\n").unwrap();
    let err = fail(&["gen-data", "--config", p(&cfg), "--out", p(&out)]);
    assert!(err.contains("unknown key `window`"), "{err}");
    assert!(err.contains("per-subject"), "{err}");
}

#[test]
fn train_attend_eval_pipeline() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    let run = tmp.path().join("swan");
    let stdout = ok(&[
        "train", "--data", p(&data), "--out", p(&run), "--variant", "swan_no_selfatt",
        "--epochs", "1", "--seeds", "1", "--r", "20", "--s", "10",
    ]);
    assert!(stdout.contains("runs: 5"), "{stdout}");
    assert_eq!(csv_rows(&run.join("runs.csv")), 5);
    for f in ["checkpoint.json", "reports.json", "summary.txt", "effective_config.txt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }

    let att = tmp.path().join("att");
    let stdout = ok(&[
        "attend", "--checkpoint", p(&run.join("checkpoint.json")), "--data", p(&data),
        "--out", p(&att), "--sigma", "0",
    ]);
    assert!(stdout.contains("attention-mass-in-interval ratio"), "{stdout}");
    let index = fs::read_to_string(att.join("attention/index.csv")).unwrap();
    assert_eq!(index.lines().count() - 1, 30, "one row per annotated sample");
    let first = index.lines().nth(1).unwrap().split(',').next().unwrap();
    let series = fs::read_to_string(att.join(format!("attention/{first}.csv"))).unwrap();
    assert!(series.starts_with("step,weight\n"));
    assert!(series
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() >= 0.0));

    let err = fail(&[
        "attend", "--checkpoint", p(&run.join("checkpoint.json")), "--data", p(&data),
        "--out", p(&att), "--ids", "S99-000",
    ]);
    assert!(err.contains("S99-000") && err.contains("available ids"), "{err}");

    let ev = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&run.join("checkpoint.json")), "--data", p(&data), "--out", p(&ev)]);
    let report = fs::read_to_string(ev.join("eval.txt")).unwrap();
    assert!(report.contains("variant: swan_no_selfatt") && report.contains("UAR:"), "{report}");
    assert_eq!(csv_rows(&ev.join("predictions.csv")), 100);
}

#[test]
fn training_compares_against_paired_runs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    let base = tmp.path().join("base");
    let common = ["--data", p(&data), "--epochs", "1", "--seeds", "0,1"];
    let mut args = vec!["train", "--out", p(&base), "--variant", "windowed_linear"];
    args.extend(common);
    ok(&args);
    let other = tmp.path().join("other");
    let runs = base.join("runs.csv");
    let mut args = vec![
        "train", "--out", p(&other), "--variant", "windowed_linear", "--r", "50", "--s", "25",
        "--compare", p(&runs),
    ];
    args.extend(common);
    let stdout = ok(&args);
    assert!(stdout.contains("runs: 10"), "{stdout}");
    assert!(stdout.contains("paired t-test vs"), "{stdout}");

    let mut args = vec!["train", "--out", p(&other), "--variant", "windowed_linear", "--compare", p(&runs)];
    args.extend(["--data", p(&data), "--epochs", "1", "--seeds", "1"]);
    let err = fail(&args);
    assert!(err.contains("--compare"), "{err}");
}

#[test]
fn sweep_with_a_single_range_has_zero_spread() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    let out = tmp.path().join("sweep");
    let stdout = ok(&[
        "sweep", "--data", p(&data), "--out", p(&out), "--ranges", "3", "--epochs", "1",
        "--seeds", "1", "--variants", "swan_no_selfatt,windowed_linear",
    ]);
    assert!(stdout.contains("swan_no_selfatt spread (max - min mean UAR): 0.0000"), "{stdout}");
    assert!(stdout.contains("windowed_linear spread (max - min mean UAR): 0.0000"), "{stdout}");
    assert_eq!(csv_rows(&out.join("sweep.csv")), 2);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("swan_no_selfatt,30,15,3"), "{table}");
    assert!(out.join("sweep_plot.csv").exists());

    let err = fail(&["sweep", "--data", p(&data), "--out", p(&out), "--variants", "transformer"]);
    assert!(err.contains("transformer"), "{err}");
}
