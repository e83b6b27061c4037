use std::path::Path;
use std::process::{Command, Output};

fn squirl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_squirl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Tiny settings so a full train/eval cycle takes a second or two.
const FAST: &[&str] = &[
    "epochs=2",
    "meta_batch=2",
    "irl_updates=2",
    "policy_updates=3",
    "warmup_steps=5",
    "hidden_width=8",
    "hidden_layers=1",
    "batch_size=16",
    "context_size=8",
    "standard_bc_steps=6",
];

fn gen_demos(dir: &Path) {
    let o = squirl(dir, &["gen-demos", "--out", "demos.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--demos", "demos.txt", "--out", out];
    args.extend_from_slice(extra);
    args.extend_from_slice(FAST);
    squirl(dir, &args)
}

#[test]
fn gen_demos_reports_every_task_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = squirl(dir.path(), &["gen-demos", "--out", "a.txt"]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 31);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));
    squirl(dir.path(), &["gen-demos", "--out", "b.txt"]);
    assert_eq!(
        std::fs::read(dir.path().join("a.txt")).unwrap(),
        std::fs::read(dir.path().join("b.txt")).unwrap()
    );
}

#[test]
fn train_writes_outputs_and_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    for out in ["r1", "r2"] {
        let o = train(dir.path(), out, &["--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("r1/checkpoint.sqrl"), read("r2/checkpoint.sqrl"));
    assert_eq!(read("r1/metrics.csv"), read("r2/metrics.csv"));
    assert!(!dir.path().join("r1/PARTIAL").exists());
    let metrics = String::from_utf8(read("r1/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "header plus one row per epoch");
    assert!(metrics.lines().last().unwrap().ends_with(",4"), "2 epochs x 2 tasks");
}

#[test]
fn every_algorithm_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    for algo in ["squirl", "squirl-irl-only", "pearl-bc", "standard-bc"] {
        let o = train(dir.path(), algo, &["--algo", algo]);
        assert!(o.status.success(), "{algo}: {}", String::from_utf8_lossy(&o.stderr));
        let ckpt = format!("{algo}/checkpoint.sqrl");
        let o = squirl(dir.path(), &["eval", &ckpt, "--n-rollouts", "2", "--n-tasks", "2", "--obs-noise", "0.01"]);
        assert!(o.status.success(), "{algo}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = stdout(&o);
        assert_eq!(csv.lines().count(), 4, "{csv}");
        assert!(csv.lines().last().unwrap().starts_with("aggregate,,"));
    }
}

#[test]
fn eval_across_seeds_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    for seed in ["0", "1"] {
        assert!(train(dir.path(), &format!("s{seed}"), &["--seed", seed]).status.success());
    }
    let o = squirl(
        dir.path(),
        &["eval", "s0/checkpoint.sqrl", "s1/checkpoint.sqrl", "--split", "seen", "--demos", "demos.txt", "--n-rollouts", "1", "--out", "seen.csv"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("seen.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
    assert!(csv.lines().skip(1).all(|l| l.contains(",2,")));

    let o = squirl(dir.path(), &["eval", "s0/checkpoint.sqrl", "--split", "seen", "--n-rollouts", "1"]);
    assert!(!o.status.success(), "seen split needs demos");
}

#[test]
fn zero_rollouts_give_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    assert!(train(dir.path(), "r", &[]).status.success());
    let o = squirl(dir.path(), &["eval", "r/checkpoint.sqrl", "--n-rollouts", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn foreign_checkpoint_version_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    assert!(train(dir.path(), "r", &[]).status.success());
    let path = dir.path().join("r/checkpoint.sqrl");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let o = squirl(dir.path(), &["eval", "r/checkpoint.sqrl", "--n-rollouts", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn failed_training_leaves_partial_marker() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    // Diverges immediately: the learning rate overflows the first step.
    let o = train(dir.path(), "bad", &["lr_q=1e300", "lr_policy_rl=1e300"]);
    assert!(!o.status.success());
    assert!(dir.path().join("bad/PARTIAL").exists());
    assert!(!dir.path().join("bad/checkpoint.sqrl").exists());
}

#[test]
fn config_file_flags_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos(dir.path());
    std::fs::write(dir.path().join("c.txt"), "# base\nprofile=desk\nseed=9\nepochs=5\n").unwrap();
    let o = train(dir.path(), "r", &["--config", "c.txt", "--algo", "pearl-bc"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = std::fs::read_to_string(dir.path().join("r/config.txt")).unwrap();
    assert!(cfg.contains("seed=9\n") && cfg.contains("algo=pearl-bc\n") && cfg.contains("epochs=2\n"));

    let o = train(dir.path(), "x", &["--config", "c.txt", "--profile", "paper"]);
    assert!(!o.status.success(), "conflicting profiles");
    let o = squirl(dir.path(), &["train", "--demos", "demos.txt", "nonsense=1"]);
    assert!(!o.status.success());
}

#[test]
fn oracle_check_passes_and_catches_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let o = squirl(dir.path(), &["oracle-check"]);
    let report = stdout(&o);
    assert!(o.status.success(), "{report}");
    for name in [
        "irl_gradient_matches_finite_differences",
        "policy_objective_matches_generator_objective",
        "discriminator_optimum_recovers_expert",
        "soft_value_iteration_gridworld_residual",
        "encoder_permutation_invariance",
    ] {
        assert!(report.contains(name), "{name} missing from report");
    }
    assert!(report.lines().filter(|l| l.starts_with("PASS")).count() >= 12);

    let o = squirl(dir.path(), &["oracle-check", "--inject-sign-flip"]);
    assert!(!o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL") && l.contains("irl_gradient")));
}
