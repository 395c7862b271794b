//! End-to-end tests of the binary: artifact creation, determinism, override
//! precedence, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn icon(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icon"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn generate_small(dir: &Path, name: &str, seed: u64) {
    let seed = seed.to_string();
    let out = icon(
        &[
            "generate",
            "--scenario",
            "spurious_shift",
            "--seed",
            &seed,
            "--out",
            name,
            "--override",
            "n_per_domain=40",
            "--override",
            "embed_dim=4",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_writes_parseable_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 0);
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("S,")));
    assert!(text.lines().any(|l| l.starts_with("T,")));

    let out = icon(
        &[
            "generate",
            "--scenario",
            "spurious_shift",
            "--seed",
            "0",
            "--out",
            "d2.csv",
            "--override",
            "n_per_domain=40",
            "--override",
            "embed_dim=4",
        ],
        dir.path(),
    );
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["artifacts"][0], "d2.csv");
    // byte-identical under identical flags
    assert_eq!(
        std::fs::read(dir.path().join("d.csv")).unwrap(),
        std::fs::read(dir.path().join("d2.csv")).unwrap()
    );
}

#[test]
fn generate_requires_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = icon(&["generate", "--scenario", "spurious_shift"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_rejects_unknown_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = icon(
        &["generate", "--scenario", "nonsense", "--out", "d.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_echoes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 1);
    std::fs::write(dir.path().join("train.cfg"), "alpha = 0.9\nepochs = 2\nbatch_size = 16\n")
        .unwrap();
    let out = icon(
        &[
            "train",
            "--data",
            "d.csv",
            "--config",
            "train.cfg",
            "--out",
            "run",
            "--override",
            "alpha=0.5",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for artifact in ["metrics.csv", "summary.json", "model.ckpt"] {
        assert!(dir.path().join("run").join(artifact).exists(), "{artifact}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    // --override beats the config file; --seed beats everything
    assert_eq!(summary["config"]["alpha"], 0.5);
    assert_eq!(summary["config"]["epochs"], 2);
    assert_eq!(summary["config"]["seed"], 3);
    assert!(summary["final_metrics"]["acc_t"].as_f64().is_some());
    assert!(summary["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn train_is_deterministic_per_flags() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 2);
    for run in ["a", "b"] {
        let out = icon(
            &[
                "train", "--data", "d.csv", "--out", run, "--seed", "5", "--override",
                "epochs=2", "--override", "batch_size=16", "--override",
                "warmup_epochs_bce_t=1",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(dir.path().join("a/metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("b/metrics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("a/model.ckpt")).unwrap(),
        std::fs::read(dir.path().join("b/model.ckpt")).unwrap()
    );
}

#[test]
fn train_rejects_unknown_config_key_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 0);
    let out = icon(
        &[
            "train", "--data", "d.csv", "--out", "run", "--override", "bogus_key=1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn train_nan_abort_exits_3_and_names_term() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "domain,label,f0,f1\nS,0,NaN,0.0\nS,1,1.0,1.0\nT,0,0.5,0.5\nT,1,-0.5,-0.5\n";
    std::fs::write(dir.path().join("nan.csv"), csv).unwrap();
    let out = icon(
        &[
            "train", "--data", "nan.csv", "--out", "run", "--override", "epochs=1",
            "--override", "batch_size=2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ce_s"));
}

#[test]
fn train_missing_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = icon(&["train", "--data", "absent.csv", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_and_probe_run_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 4);
    let out = icon(
        &[
            "train", "--data", "d.csv", "--out", "run", "--override", "epochs=1",
            "--override", "batch_size=16",
        ],
        dir.path(),
    );
    assert!(out.status.success());

    let out = icon(
        &[
            "eval", "--data", "d.csv", "--checkpoint", "run/model.ckpt", "--out", "ev",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ev/confusion_t.csv").exists());

    let probe = |seed: &str, out_dir: &str| {
        let out = icon(
            &[
                "probe", "--data", "d.csv", "--checkpoint", "run/model.ckpt", "--seed", seed,
                "--out", out_dir,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let first = probe("3", "p1");
    let second = probe("3", "p2");
    let line = first.lines().next().unwrap();
    let pct: f64 = line.strip_prefix("probe_pct ").unwrap().parse().unwrap();
    assert!((0.0..=100.0).contains(&pct));
    assert_eq!(
        first.lines().next().unwrap(),
        second.lines().next().unwrap()
    );
}

#[test]
fn probe_refuses_datasets_with_fewer_than_two_target_rows() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 4);
    let out = icon(
        &[
            "train", "--data", "d.csv", "--out", "run", "--override", "epochs=1",
            "--override", "batch_size=16",
        ],
        dir.path(),
    );
    assert!(out.status.success());

    let tiny = "domain,label,f0,f1,f2,f3\nS,0,0.1,0.2,0.3,0.4\nS,1,0.4,0.3,0.2,0.1\nT,0,0.1,0.1,0.1,0.1\n";
    std::fs::write(dir.path().join("tiny.csv"), tiny).unwrap();
    let out = icon(
        &[
            "probe", "--data", "tiny.csv", "--checkpoint", "run/model.ckpt", "--out", "p",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn probe_rejects_mismatched_checkpoint_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 4);
    let out = icon(
        &[
            "train", "--data", "d.csv", "--out", "run", "--override", "epochs=1",
            "--override", "batch_size=16",
        ],
        dir.path(),
    );
    assert!(out.status.success());

    // dataset with a different input dimension
    let other = "domain,label,f0,f1\nS,0,0.1,0.2\nS,1,0.4,0.3\nT,0,0.1,0.1\nT,1,0.2,0.2\n";
    std::fs::write(dir.path().join("other.csv"), other).unwrap();
    let out = icon(
        &[
            "probe", "--data", "other.csv", "--checkpoint", "run/model.ckpt", "--out", "p",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn ablate_param_sweep_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 6);
    let out = icon(
        &[
            "ablate", "--data", "d.csv", "--param", "alpha", "--values", "0.25,0.75",
            "--seeds", "2", "--out", "ab", "--override", "epochs=1", "--override",
            "batch_size=16",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let aggregate = std::fs::read_to_string(dir.path().join("ab/ablate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 3, "{aggregate}"); // header + 2 settings
    let runs = std::fs::read_to_string(dir.path().join("ab/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5, "{runs}"); // header + 2 settings x 2 seeds
}

#[test]
fn ablate_unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 6);
    let out = icon(
        &["ablate", "--data", "d.csv", "--suite", "nonsense", "--out", "ab"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_cluster_count_suite_covers_multipliers() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "d.csv", 7);
    let out = icon(
        &[
            "ablate", "--data", "d.csv", "--suite", "cluster_count", "--seeds", "1",
            "--out", "ab", "--override", "epochs=1", "--override", "batch_size=16",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let aggregate = std::fs::read_to_string(dir.path().join("ab/ablate.csv")).unwrap();
    for name in ["multiplier_0.5", "multiplier_1", "multiplier_2"] {
        assert!(aggregate.contains(name), "{aggregate}");
    }
}
