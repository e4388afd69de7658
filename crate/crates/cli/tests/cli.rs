use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lattice_repair_cli::{FileConfig, ModelFlags, RunFlags, Settings};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lattice-repair"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn prepare(dir: &Path) {
    run(dir, &["synth", "-n", "600", "--seed", "5", "--out-turns", "train.txt", "--out-gold", "train.jsonl", "--out-lexicon", "lex.json"]);
    run(dir, &["synth", "-n", "100", "--seed", "6", "--out-turns", "held.txt", "--out-gold", "held.jsonl"]);
    run(dir, &["synth", "-n", "150", "--seed", "7", "--out-turns", "test.txt", "--out-gold", "test.jsonl"]);
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let train = run(d, &[
        "train", "--corpus", "train.jsonl", "--lexicon", "lex.json", "--out", "model.json",
        "--heldout-gold", "held.jsonl", "--heldout-turns", "held.txt",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
    assert!(report["summary"]["repairs"].as_u64().unwrap() > 50);
    assert!(report["calibration"].is_object());

    run(d, &["process", "--model", "model.json", "--lexicon", "lex.json", "--input", "test.txt", "--out", "out.jsonl", "--edits", "edits.jsonl", "--jobs", "2"]);
    let lattices = fs::read_to_string(d.join("out.jsonl")).unwrap();
    let edits = fs::read_to_string(d.join("edits.jsonl")).unwrap();
    assert_eq!(lattices.lines().count(), 150);
    assert_eq!(edits.lines().count(), 150);

    let eval = run(d, &["eval", "--gold", "test.jsonl", "--edits", "edits.jsonl", "--label", "Test", "--report", "metrics.json"]);
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("Detection") && table.contains("Correct scope"));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["detection_recall"].as_f64().unwrap() > 50.0);

    // Processed lattices are valid input again.
    run(d, &["process", "--model", "model.json", "--lexicon", "lex.json", "--input", "out.jsonl", "--out", "again.jsonl", "--edits", "again-edits.jsonl"]);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let mut seen = Vec::new();
    for k in 0..3 {
        let model = format!("model{k}.json");
        let out = format!("out{k}.jsonl");
        let edits = format!("edits{k}.jsonl");
        run(d, &["train", "--corpus", "train.jsonl", "--lexicon", "lex.json", "--out", &model]);
        run(d, &["process", "--model", &model, "--lexicon", "lex.json", "--input", "test.txt", "--out", &out, "--edits", &edits, "--jobs", "3"]);
        seen.push([model, out, edits].map(|f| fs::read(d.join(f)).unwrap()));
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn synth_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a", "b"] {
        run(d, &["synth", "-n", "20", "--seed", "42", "--out-turns", &format!("{name}.txt"), "--out-gold", &format!("{name}.jsonl")]);
    }
    run(d, &["synth", "-n", "20", "--seed", "43", "--out-turns", "c.txt", "--out-gold", "c.jsonl"]);
    let read = |f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.txt"), read("c.txt"));
}

#[test]
fn invalid_flags_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    run(d, &["train", "--corpus", "train.jsonl", "--lexicon", "lex.json", "--out", "model.json"]);
    for bad in [["--tau-ip", "1.5"], ["--beam", "0"], ["--budget-ms", "0"], ["--window", "5"]] {
        let mut args = vec!["process", "--model", "model.json", "--lexicon", "lex.json", "--input", "test.txt", "--out", "o", "--edits", "e"];
        args.extend(bad);
        let out = bin().current_dir(d).args(&args).output().unwrap();
        assert!(!out.status.success(), "{bad:?} was accepted");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    let out = bin().current_dir(d).args(["train", "--corpus", "missing.jsonl", "--lexicon", "lex.json", "--out", "m"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let file = FileConfig::parse("beam = 3\ntau_ip = 0.8\ntheta = -2.0\nalpha = 0.6\nbeta = 0.2\ngamma = 0.2\n").unwrap();
    let flags = RunFlags {
        beam: Some(7),
        ..RunFlags::default()
    };
    let s = Settings::resolve(&file, &ModelFlags::default(), &flags).unwrap();
    assert_eq!(s.beam, 7);
    assert_eq!(s.tau_ip, 0.8);
    assert_eq!(s.theta, Some(-2.0));
    assert_eq!(s.weights.alpha, 0.6);
    assert_eq!(s.window, 4);
    assert!(FileConfig::parse("bogus = 1").is_err());
    let bad = FileConfig {
        alpha: Some(0.9),
        ..FileConfig::default()
    };
    assert!(Settings::resolve(&bad, &ModelFlags::default(), &RunFlags::default()).is_err());
}

#[test]
fn config_flag_reaches_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    fs::write(d.join("run.toml"), "theta = 1000.0\n").unwrap();
    run(d, &["train", "--corpus", "train.jsonl", "--lexicon", "lex.json", "--out", "model.json"]);
    run(d, &["--config", "run.toml", "process", "--model", "model.json", "--lexicon", "lex.json", "--input", "test.txt", "--out", "o.jsonl", "--edits", "e.jsonl"]);
    let edits = fs::read_to_string(d.join("e.jsonl")).unwrap();
    assert!(edits.lines().all(|l| l.contains(r#""edits":[]"#)));
    run(d, &["--config", "run.toml", "process", "--theta", "-1000", "--model", "model.json", "--lexicon", "lex.json", "--input", "test.txt", "--out", "o.jsonl", "--edits", "e.jsonl"]);
    let edits = fs::read_to_string(d.join("e.jsonl")).unwrap();
    assert!(!edits.lines().all(|l| l.contains(r#""edits":[]"#)));
}
