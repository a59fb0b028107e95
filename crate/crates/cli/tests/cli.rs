use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 10] =
    ["gen-data", "split", "pairs", "train", "generate", "probe", "grid", "sizes", "augeval", "gradcheck"];

fn kecae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kecae"))
        .current_dir(dir)
        .args(args)
        .env_remove("KECAE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kecae(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Tiny data set written by `gen-data` + `split` into `dir/data`.
fn tiny_data(dir: &Path) {
    fs::write(
        dir.join("tiny.cfg"),
        "preset = tiny\nkl0_count = 24\nkl2_count = 18\nbatch_size = 4\npair_n = 12\nepochs = 2\n",
    )
    .unwrap();
    ok(dir, &["gen-data", "--config", "tiny.cfg", "--out", "pool"]);
    ok(dir, &["split", "--config", "tiny.cfg", "--input", "pool", "--out", "data"]);
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for sub in SUBCOMMANDS {
        let text = ok(dir.path(), &[sub, "--help"]);
        for flag in ["--config", "--seed", "--preset", "--out", "--n", "--epochs", "--lambda1", "--lambda2"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
        assert!(text.contains("[default: 1]"), "{sub}: seed default missing");
        assert!(text.contains("[default: desk]"), "{sub}: preset default missing");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = kecae(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(kecae(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(kecae(dir.path(), &["train", "--set", "colour=red"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = kecae(dir.path(), &["pairs", "--set", "data_dir=nowhere"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["gradcheck", "--out", "gc"]);
    assert!(text.contains("conv2d/input"));
    assert!(text.contains("deconv2d/weight"));
    for line in text.lines().filter(|l| l.contains('/')) {
        let err: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn pairs_are_unique_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.cfg"), "preset = tiny\nkl0_count = 60\nkl2_count = 50\n").unwrap();
    ok(dir.path(), &["gen-data", "--config", "p.cfg", "--out", "pool"]);
    ok(dir.path(), &["split", "--config", "p.cfg", "--input", "pool", "--out", "data"]);
    ok(dir.path(), &["pairs", "--config", "p.cfg", "--n", "1000", "--seed", "1", "--out", "pairs"]);
    let text = fs::read_to_string(dir.path().join("pairs/pairs.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows.iter().collect::<HashSet<_>>().len(), 1000);
    assert!(dir.path().join("pairs/config.txt").exists());
}

#[test]
fn train_is_deterministic_and_downstream_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_data(d);
    ok(d, &["train", "--config", "tiny.cfg", "--seed", "7", "--out", "a"]);
    ok(d, &["train", "--config", "tiny.cfg", "--seed", "7", "--out", "b"]);
    let a = fs::read(d.join("a/metrics.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/metrics.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 3);
    let echoed = fs::read_to_string(d.join("a/config.txt")).unwrap();
    assert!(echoed.contains("seed = 7"), "{echoed}");
    assert!(echoed.contains("preset = tiny"));

    ok(d, &["generate", "--config", "tiny.cfg", "--checkpoint", "a/checkpoint", "--out", "gen"]);
    let labels = fs::read_to_string(d.join("gen/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 4 * 12);
    assert!(d.join("gen/kl0").is_dir() && d.join("gen/kl2").is_dir());

    let probe = ok(d, &["probe", "--config", "tiny.cfg", "--checkpoint", "a/checkpoint", "--out", "pr"]);
    assert!(probe.starts_with("acc_hK,acc_hU"));

    let aug = ok(
        d,
        &["augeval", "--config", "tiny.cfg", "--checkpoint", "a/checkpoint", "--out", "aug", "--set", "classifier_epochs=1", "--set", "eval_seeds=1", "--n", "4"],
    );
    assert!(aug.contains("siamese-gap,X+Xhat+Xprime"));
    assert_eq!(fs::read_to_string(d.join("aug/augment.csv")).unwrap().lines().count(), 1 + 8);
}

#[test]
fn sizes_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_data(d);
    ok(d, &["sizes", "--config", "tiny.cfg", "--out", "s", "--epochs", "1", "--set", "sizes=8,12", "--set", "eval_seeds=1"]);
    let sizes = fs::read_to_string(d.join("s/sizes.csv")).unwrap();
    assert!(sizes.starts_with("N,final_loss,acc\n"));
    assert_eq!(sizes.lines().count(), 3);
}

#[test]
fn bad_thread_env_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kecae"))
        .current_dir(dir.path())
        .args(["gradcheck"])
        .env("KECAE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
