use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aio_stereo::ftc;

const BIN: &str = env!("CARGO_BIN_EXE_aio-stereo");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("AIO_STEREO_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a small configuration into `root` and returns its path.
fn tiny_config(root: &Path, steps: usize, hidden: usize) -> PathBuf {
    let cfg = format!(
        r#"{{
  "output_dir": "{out}",
  "seed": 3,
  "data": {{"dir": "{data}", "height": 16, "width": 32, "d_max": 6, "n_train": 4, "n_val": 3}},
  "model": {{"feature_widths": [4, 6], "feature_channels": 8, "context_stem": 4,
            "context_widths": [4, 6, 8], "hidden": {hidden}, "max_disp": 4, "radius": 1, "levels": 2,
            "train_iters": 2, "eval_iters": 3}},
  "optim": {{"steps": {steps}, "peak_lr": 1e-3}},
  "train": {{"probe_every": 0, "probe_samples": 2}}
}}"#,
        out = root.join("run").display(),
        data = root.join("data").display(),
    );
    let p = root.join(format!("cfg_{steps}_{hidden}.json"));
    std::fs::write(&p, cfg).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["train", "--bogus"])), 2);
    assert_eq!(code(&run(&["train", "--ablation", "half"])), 2);
    assert_eq!(code(&run(&["train", "--seed", "minus-one"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"hiden": 3}}"#).unwrap();
    let o = run(&["train", "--config", s(&bad)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    std::fs::write(&bad, r#"{"data": {"density": 0.0}}"#).unwrap();
    assert_eq!(code(&run(&["gen-data", "--config", s(&bad)])), 2);
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&run(&["eval", "--config", s(&bad), "--checkpoint", "x.ckpt"])), 2);
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1, 4);
    assert!(run(&["gen-data", "--config", s(&cfg)]).status.success());
    assert!(run(&["train", "--config", s(&cfg)]).status.success());
    let ckpt = dir.path().join("run/final.ckpt");
    let o = Command::new(BIN)
        .args(["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)])
        .env("AIO_STEREO_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = Command::new(BIN)
        .args(["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)])
        .env("AIO_STEREO_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_data_is_idempotent_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1, 4);
    assert!(run(&["gen-data", "--config", s(&cfg)]).status.success());
    let left = dir.path().join("data/train/train_0000_left.pgm");
    let before = std::fs::read(&left).unwrap();
    std::fs::write(&left, b"sentinel").unwrap();
    let o = run(&["gen-data", "--config", s(&cfg)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("already present"));
    assert_eq!(std::fs::read(&left).unwrap(), b"sentinel");
    assert!(run(&["gen-data", "--config", s(&cfg), "--force"]).status.success());
    assert_eq!(std::fs::read(&left).unwrap(), before);
}

#[test]
fn train_eval_and_gate_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3, 4);
    assert!(run(&["gen-data", "--config", s(&cfg)]).status.success());
    let o = run(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = dir.path().join("run");
    for f in ["final.ckpt", "train_log.csv", "config.json"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }

    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2, "second train must refuse to overwrite");
    assert!(run(&["train", "--config", s(&cfg), "--force"]).status.success());

    let ckpt = run_dir.join("final.ckpt");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for e in [&e1, &e2] {
        let o = run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(e), "--render"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let csv1 = std::fs::read_to_string(e1.join("metrics.csv")).unwrap();
    assert_eq!(csv1, std::fs::read_to_string(e2.join("metrics.csv")).unwrap());
    assert_eq!(csv1.lines().count(), 1 + 3 + 1);
    assert!(csv1.lines().last().unwrap().starts_with("all,"));
    for id in ["val_0000", "val_0001", "val_0002"] {
        let a = std::fs::read(e1.join(format!("{id}_disp.pfm"))).unwrap();
        assert_eq!(a, std::fs::read(e2.join(format!("{id}_disp.pfm"))).unwrap());
        assert!(e1.join(format!("{id}_disp.pgm")).is_file());
    }

    // a checkpoint is never evaluated under a different model config
    let other = tiny_config(dir.path(), 3, 6);
    let o = run(&["eval", "--config", s(&other), "--checkpoint", s(&ckpt), "--out", s(&e1)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("refusing"), "{}", stderr(&o));

    let gates = dir.path().join("gates");
    let o = run(&["export-gates", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&gates)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pgms: Vec<_> = std::fs::read_dir(&gates)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    assert_eq!(pgms.len(), 9);
    for block in 1..=3 {
        let maps: Vec<_> = ["dino", "sam", "depth_anything"]
            .iter()
            .map(|t| ftc::read(gates.join(format!("gates_block{block}_{t}.ftc"))).unwrap())
            .collect();
        for i in 0..maps[0].numel() {
            let sum: f32 = maps.iter().map(|m| m.data()[i]).sum();
            assert!(sum <= 1.0 + 1e-6, "block {block} pixel {i}: {sum}");
            let zeros = maps.iter().filter(|m| m.data()[i] == 0.0).count();
            assert!(zeros >= 1, "top-2 of 3 leaves one zero weight");
        }
    }
    let o = run(&["export-gates", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--sample", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_fault_injection_fails_with_one() {
    let o = run(&["gradcheck", "--inject-fault", "sigmoid"]);
    assert_eq!(code(&o), 1);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL sigmoid")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("PASS conv2d ")), "{out}");
}
