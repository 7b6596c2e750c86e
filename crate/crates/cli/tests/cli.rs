use std::path::Path;
use std::process::{Command, Output};

fn easyens(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_easyens"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_dataset(dir: &Path) {
    let o = easyens(
        &["synth-data", "--out", "data.bin", "--subjects", "4", "--windows-per-recording", "2", "--seed", "3"],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

const SMALL: &[&str] = &["--data", "data.bin", "--n-train", "2", "--n-test", "2", "--batch-size", "16"];

#[test]
fn equivalence_check_reports_pass_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = easyens(&["equivalence-check", "--n", "2", "--trials", "1", "--width", "64"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("family"), "{out}");
    assert!(out.contains("max logit deviation"));
    assert!(out.lines().last().unwrap().starts_with("PASS"), "{out}");
}

#[test]
fn trials_write_one_csv_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    assert!(easyens(&["synth-data", "--out", "ref.bin"], dir.path()).status.success());
    let o = easyens(
        &["trials", "--data", "ref.bin", "--mode", "ee", "--n", "2", "--trials", "2", "--epochs", "12"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.lines().skip(1).all(|l| l.contains(",ee,2,")), "{csv}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn unconverged_trials_are_written_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let mut args = vec!["trials", "--mode", "bl", "--trials", "2", "--epochs", "1"];
    args.extend_from_slice(SMALL);
    let o = easyens(&args, dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no trial converged"));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",false,")).count(), 2, "{csv}");
}

#[test]
fn train_then_eval_round_trips_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let mut args = vec!["train", "--mode", "ee", "--n", "2", "--out", "model", "--epochs", "1"];
    args.extend_from_slice(SMALL);
    assert!(easyens(&args, dir.path()).status.success());
    let o = easyens(
        &["eval", "--checkpoint", "model", "--data", "data.bin", "--n-train", "2", "--n-test", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("test accuracy"));
}

#[test]
fn ablate_covers_every_standard_code() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let mut args = vec!["ablate", "--mode", "ee", "--n", "4", "--trials", "1", "--epochs", "1"];
    args.extend_from_slice(SMALL);
    let o = easyens(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for code in ["GGN", "CGN", "GG1", "GLN", "CL1"] {
        assert!(out.lines().any(|l| l.starts_with(code)), "{code} missing:\n{out}");
    }
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = easyens(&["trials", "--trials", "1"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));

    small_dataset(dir.path());
    let mut args = vec!["train", "--precision", "f16", "--out", "m", "--epochs", "1"];
    args.extend_from_slice(SMALL);
    let o = easyens(&args, dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown precision"));
}
