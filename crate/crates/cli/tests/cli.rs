//! End-to-end checks of the `longtail` binary: exit codes, file outputs,
//! determinism of the generator, and checkpoint compatibility errors.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_longtail"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn write_config(path: &Path, extra: &str) {
    let base = "mode=tp\nencoder=recurrent\ndim=4\nwindow=5\nk=2\nalpha=0.1\nbeta=0.05\n\
                lambda=0.1\nbatch=2\nnegatives=2\niterations=5\nseed=7\ncutoffs=5,10\n\
                repetitions=2\n";
    fs::write(path, format!("{base}{extra}")).unwrap();
}

fn gen_corpus(path: &Path, users: u32, seed: u64) {
    let out = run(&[
        "gen-synth",
        "--out",
        path.to_str().unwrap(),
        "--users",
        &users.to_string(),
        "--clusters",
        "4",
        "--items-per-cluster",
        "20",
        "--seed",
        &seed.to_string(),
    ]);
    assert!(out.status.success(), "gen-synth failed: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, "learning_rate=0.1\n");
    let data = dir.path().join("data.tsv");
    gen_corpus(&data, 60, 7);

    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate"), "stderr should name the bad key: {err}");
    assert!(err.contains("valid keys"), "stderr should list valid keys: {err}");
    assert!(err.contains("alpha"), "stderr should include a real key: {err}");
}

#[test]
fn usage_error_exits_two() {
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2), "missing required args is a usage error");
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_synth_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    gen_corpus(&a, 120, 7);
    gen_corpus(&b, 120, 7);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.path().join("c.tsv");
    gen_corpus(&c, 120, 8);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap(), "seed must matter");
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, "");
    let data = dir.path().join("data.tsv");
    gen_corpus(&data, 60, 7);
    let out_dir = dir.path().join("run");

    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let log = fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,pred_loss,disc_loss,disc_accuracy,pseudo_grad_norm"
    );
    let iters: Vec<usize> =
        lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, (0..5).collect::<Vec<_>>());

    assert!(out_dir.join("checkpoint.ltap").exists());
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.iterations=5"));
    assert!(manifest.contains("dataset.sha256="));
    assert!(manifest.contains("run.end_unix="));
}

#[test]
fn eval_rejects_checkpoint_from_other_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, "");
    let data = dir.path().join("data.tsv");
    gen_corpus(&data, 60, 7);
    let other = dir.path().join("other.tsv");
    gen_corpus(&other, 90, 11);
    let out_dir = dir.path().join("run");

    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        other.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("vocabulary"), "stderr should explain the mismatch: {err}");
}

#[test]
fn eval_report_rows_match_table_cohorts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, "");
    let data = dir.path().join("data.tsv");
    gen_corpus(&data, 60, 7);
    let out_dir = dir.path().join("run");

    for cmd in ["train", "eval"] {
        let out = run(&[
            cmd,
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }

    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "cohort,cutoff,metric,mean,std,n");
    // Two cutoffs, two metrics per populated cohort; every mean parses and
    // sits inside [0, 1].
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "bad row {line:?}");
        let mean: f64 = fields[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&mean), "metric out of range: {line:?}");
        rows += 1;
    }
    assert!(rows % 4 == 0 && rows > 0, "cohort blocks of 2 cutoffs x 2 metrics, got {rows}");
}

#[test]
fn verify_command_exits_zero_and_prints_suites() {
    let out = run(&["verify", "--instances", "12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for suite in ["gradcheck", "surrogate", "stop-gradient"] {
        assert!(text.contains(suite), "missing suite line for {suite}: {text}");
    }
}
