//! End-to-end tests of the `loft` binary: exit codes, pinned CSV
//! schemas, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loft"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("loft_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

const PROBE_CONFIG: &str = r#"{
  "task": {"d_in": 8, "d_out": 8, "n": 40, "r_star": 3, "seed": 11,
           "weight_mode": "random_orthogonal", "whitened": true},
  "supports": [{"method": "skewgrad", "r": 3}, {"method": "random", "r": 3, "seed": 5}],
  "train": {"learning_rate": 0.3, "steps": 20, "seed": 11}
}"#;

const SWEEP_CONFIG: &str = r#"{
  "task": {"d_in": 8, "d_out": 8, "n": 40, "r_star": 3, "seed": 3,
           "weight_mode": "random_orthogonal", "whitened": true},
  "train": {"learning_rate": 0.4, "steps": 30, "seed": 3},
  "sweep": {"axis": "data_fraction", "grid": [0.5, 1.0],
            "methods": ["skewgrad", "random"], "seeds": [1, 2], "rank": 3}
}"#;

const RECOVER_CONFIG: &str = r#"{
  "recover": {
    "w0": {"d_out": 5, "d_in": 8, "seed": 9},
    "configs": [
      {"method": "hra", "depth": 3, "seed": 1},
      {"method": "psoft", "r": 2, "seed": 2},
      {"method": "block_oft", "block_width": 2, "seed": 3}
    ]
  }
}"#;

#[test]
fn check_passes_and_is_reproducible() {
    let dir = tmp_dir("check");
    let out1 = dir.join("a");
    let out2 = dir.join("b");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["check", "--seed", "7", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out1.join("check.json")).unwrap();
    let b = std::fs::read(out2.join("check.json")).unwrap();
    assert_eq!(a, b, "check.json must be byte-identical across reruns");
}

#[test]
fn check_corrupt_support_exits_nonzero() {
    let dir = tmp_dir("corrupt");
    let status = bin()
        .args(["check", "--seed", "7", "--corrupt-support", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn probe_schema_and_determinism() {
    let dir = tmp_dir("probe");
    let cfg = write(&dir, "probe.json", PROBE_CONFIG);
    let out1 = dir.join("r1");
    let out2 = dir.join("r2");
    for out in [&out1, &out2] {
        let status = bin()
            .arg("probe")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv = std::fs::read_to_string(out1.join("probe_skewgrad.csv")).unwrap();
    assert!(csv.starts_with("step,loss\n"), "golden header violated: {csv}");
    assert_eq!(csv.lines().count(), 22); // header + steps 0..=20
    for name in ["probe_skewgrad.csv", "probe_random.csv", "probe.json"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn train_schema_is_pinned() {
    let dir = tmp_dir("train");
    let cfg = write(&dir, "train.json", PROBE_CONFIG);
    let out = dir.join("out");
    let status = bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--svg")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("train_skewgrad.csv")).unwrap();
    assert!(csv.starts_with("step,train_loss,eval_metric\n"));
    assert!(out.join("train.svg").exists());
    // Manifest lists every emitted file.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    let outputs: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(outputs.contains(&name), "manifest missing {name}");
    }
}

#[test]
fn sweep_schema_and_seed_determinism() {
    let dir = tmp_dir("sweep");
    let cfg = write(&dir, "sweep.json", SWEEP_CONFIG);
    let out1 = dir.join("s1");
    let out2 = dir.join("s2");
    for out in [&out1, &out2] {
        let status = bin()
            .arg("sweep")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv = std::fs::read_to_string(out1.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("axis,method,seed,metric\n"));
    assert_eq!(
        std::fs::read(out1.join("sweep.csv")).unwrap(),
        std::fs::read(out2.join("sweep.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(out1.join("sweep.json")).unwrap(),
        std::fs::read(out2.join("sweep.json")).unwrap()
    );
}

#[test]
fn sweep_thread_cap_does_not_change_output() {
    let dir = tmp_dir("sweep_threads");
    let cfg = write(&dir, "sweep.json", SWEEP_CONFIG);
    let out1 = dir.join("t1");
    let out4 = dir.join("t4");
    let status = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out1)
        .env("LOFT_KIT_THREADS", "1")
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out4)
        .env("LOFT_KIT_THREADS", "4")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(out1.join("sweep.csv")).unwrap(),
        std::fs::read(out4.join("sweep.csv")).unwrap()
    );
}

#[test]
fn recover_schema_and_pass() {
    let dir = tmp_dir("recover");
    let cfg = write(&dir, "recover.json", RECOVER_CONFIG);
    let out = dir.join("out");
    let status = bin()
        .arg("recover")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("recover.csv")).unwrap();
    assert!(csv.starts_with("method,residual,pass\n"));
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",true"), "recovery failed: {line}");
    }
}

#[test]
fn config_errors_exit_2_and_list_keys() {
    let dir = tmp_dir("badcfg");
    let cfg = write(
        &dir,
        "bad.json",
        r#"{"task": {"d_in": 8}, "mystery": 1}"#,
    );
    let output = bin()
        .arg("probe")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("mystery"), "{stderr}");
    assert!(stderr.contains("task.d_out"), "{stderr}");
    assert!(stderr.contains("'supports'"), "{stderr}");
}

#[test]
fn support_requires_gradient_for_gradient_methods() {
    let dir = tmp_dir("support");
    let w = write(&dir, "W.csv", "1,0\n0,1\n");
    let output = bin()
        .arg("support")
        .arg("--weights")
        .arg(&w)
        .args(["--method", "skewgrad", "--r", "1", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let ok = bin()
        .arg("support")
        .arg("--weights")
        .arg(&w)
        .args(["--method", "principal", "--r", "1", "--out"])
        .arg(dir.join("out2"))
        .status()
        .unwrap();
    assert!(ok.success());
}

#[test]
fn support_skewgrad_reports_unit_rho() {
    // On any valid (W, G) pair, the skew-informed support captures the
    // whole signal of its own construction gradient.
    let dir = tmp_dir("support_rho");
    let w = write(&dir, "W.csv", "3,0,0,0\n0,2,0,0\n0,0,1,0\n0,0,0,0.5\n");
    let g = write(&dir, "G.csv", "0,5,0,1\n-5,0,2,0\n0,-2,0,3\n-1,0,-3,0\n");
    let out = dir.join("out");
    let status = bin()
        .arg("support")
        .arg("--weights")
        .arg(&w)
        .arg("--grad")
        .arg(&g)
        .args(["--method", "skewgrad", "--r", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("support.json")).unwrap())
            .unwrap();
    let rho = diag["rho"].as_f64().unwrap();
    assert!((rho - 1.0).abs() <= 1e-8, "rho = {rho}");
    // P.csv is a readable row-orthonormal matrix.
    let p_text = std::fs::read_to_string(out.join("P.csv")).unwrap();
    assert_eq!(p_text.lines().count(), 2);
}

#[test]
fn probe_zero_learning_rate_has_constant_loss_column() {
    let dir = tmp_dir("probe_lr0");
    let cfg = write(
        &dir,
        "probe.json",
        r#"{
  "task": {"d_in": 8, "d_out": 8, "n": 40, "r_star": 3, "seed": 2,
           "weight_mode": "random_orthogonal", "whitened": true},
  "supports": [{"method": "skewgrad", "r": 3}],
  "train": {"learning_rate": 0.0, "steps": 10, "seed": 2}
}"#,
    );
    let out = dir.join("out");
    let status = bin()
        .arg("probe")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("probe_skewgrad.csv")).unwrap();
    let losses: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(losses.len(), 11);
    assert!(losses.iter().all(|&l| l == losses[0]), "loss column not constant: {losses:?}");
}

#[test]
fn seed_flag_overrides_config_seeds() {
    let dir = tmp_dir("seedflag");
    let cfg = write(&dir, "probe.json", PROBE_CONFIG);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let out_c = dir.join("c");
    for (out, seed) in [(&out_a, "77"), (&out_b, "77"), (&out_c, "78")] {
        let status = bin()
            .arg("probe")
            .arg("--config")
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out_a.join("probe_skewgrad.csv")).unwrap();
    let b = std::fs::read(out_b.join("probe_skewgrad.csv")).unwrap();
    let c = std::fs::read(out_c.join("probe_skewgrad.csv")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c, "different seeds must change the data");
}
