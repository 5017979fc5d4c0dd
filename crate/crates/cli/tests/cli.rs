use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 10] = [
    "--set",
    "total_steps=150",
    "--set",
    "trainer.actors=3",
    "--set",
    "trainer.rollout=5",
    "--set",
    "eval_every=2",
    "--set",
    "abstraction.calibration_frames=16",
];

fn coex(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coex"))
        .env("COEX_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .unwrap()
}

fn run_small(root: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--preset", "four-rooms-coex", "--out", out];
    args.extend(SMALL);
    args.extend(extra);
    coex(root, &args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn completed_run_exits_zero_under_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_small(tmp.path(), "done", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("done");
    for f in ["metrics.csv", "summary.json", "final.ckpt"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["env_steps"], 150);
}

#[test]
fn early_stop_exits_three_and_resume_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_small(tmp.path(), "partial", &["--stop-after", "4"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!tmp.path().join("partial/summary.json").exists());
    let ckpt = tmp.path().join("partial/checkpoints/iter-00000004.ckpt");
    assert!(ckpt.exists());
    let o = coex(tmp.path(), &["run", "--resume", ckpt.to_str().unwrap(), "--out", "partial"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = run_small(tmp.path(), "whole", &[]);
    assert_eq!(o.status.code(), Some(0));
    let a = fs::read(tmp.path().join("partial/metrics.csv")).unwrap();
    let b = fs::read(tmp.path().join("whole/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bad_configs_fail_without_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_small(tmp.path(), "bad", &["--set", "trainer.gama=0.9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run_small(tmp.path(), "zero", &["--set", "total_steps=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("zero").exists());
    let o = coex(tmp.path(), &["run", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(1));
    let o = coex(tmp.path(), &["run", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_applies_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let o = coex(
        tmp.path(),
        &["run", "--preset", "four-rooms-coex", "--set", "trainer.gamma=0.9", "--print-config"],
    );
    assert_eq!(o.status.code(), Some(0));
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["trainer"]["gamma"], 0.9);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn eval_and_attention_export_read_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_small(tmp.path(), "src", &[]).status.code(), Some(0));
    let ckpt = tmp.path().join("src/final.ckpt");
    let before = fs::read(&ckpt).unwrap();

    let o = coex(tmp.path(), &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--iterations", "3", "--out", "eval.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["env_steps"], 45);

    let o = coex(
        tmp.path(),
        &["export-attention", "--checkpoint", ckpt.to_str().unwrap(), "--out", "heat/att.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("heat/att.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 15);
    assert_eq!(fs::read(&ckpt).unwrap(), before);

    let o = coex(tmp.path(), &["eval", "--checkpoint", "missing.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plain_runs_cannot_export_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--preset", "four-rooms-a2c", "--out", "plain"];
    args.extend(SMALL);
    assert_eq!(coex(tmp.path(), &args).status.code(), Some(0));
    let ckpt = tmp.path().join("plain/final.ckpt");
    let o = coex(tmp.path(), &["export-attention", "--checkpoint", ckpt.to_str().unwrap(), "--out", "a.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shipped_configs_match_the_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_stem().unwrap().to_str().unwrap().to_string();
        let from_file = coex(tmp.path(), &["run", "--config", path.to_str().unwrap(), "--print-config"]);
        let from_preset = coex(tmp.path(), &["run", "--preset", &name, "--print-config"]);
        assert_eq!(from_file.status.code(), Some(0), "{name}: {}", stderr(&from_file));
        assert_eq!(from_file.stdout, from_preset.stdout, "{name}");
        seen += 1;
    }
    assert_eq!(seen, 5);
}
