//! End-to-end command-line tests on a small grid: every subcommand, the
//! documented exit codes, and output determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cylsound")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn config_with_model(dir: &Path, model: &str) -> PathBuf {
    let path = dir.join("config.json");
    let body = format!(
        r#"{{
  "grid": {{ "nr": 6, "nrp": 7, "nphi": 8, "nz": 8 }},
  "omegas": [2.0],
  "model": {model},
  "bench": {{ "grids": [[4, 8, 8]] }}
}}"#
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn small_config(dir: &Path, _extra: &str) -> PathBuf {
    config_with_model(dir, r#"{ "id": "model1", "a0": 0.545 }"#)
}

#[test]
fn forward_invert_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("fwd");

    let res = run(&[
        "forward",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--save-table",
    ]);
    assert!(
        res.status.success(),
        "forward failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let wdir = out.join("omega-2").join("w");
    assert!(wdir.join("meta.txt").exists());
    assert!(wdir.join("payload.bin").exists());
    assert!(out.join("omega-2").join("u0").join("payload.bin").exists());
    assert!(out.join("omega-2").join("convergence.csv").exists());
    assert!(out.join("omega-2").join("kernel-table").join("payload.bin").exists());
    assert!(out.join("xi_exact").join("payload.bin").exists());

    // container shape is recorded in the descriptor
    let meta = std::fs::read_to_string(wdir.join("meta.txt")).unwrap();
    assert!(meta.contains("shape = 6 8 8"), "meta:\n{meta}");
    assert!(meta.contains("region = Y"));

    // invert the generated data
    let rec = tmp.path().join("rec");
    let res = run(&[
        "invert",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        out.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "invert failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(rec.join("xi").join("payload.bin").exists());
    assert!(rec.join("c").join("payload.bin").exists());
    assert!(rec.join("omega-2").join("u").join("payload.bin").exists());
    assert!(rec.join("omega-2").join("v").join("payload.bin").exists());
    assert!(rec.join("omega-2").join("diagnostics.csv").exists());
    assert!(rec.join("timing.csv").exists());

    // the reconstructed contrast is a real-valued field
    let (xi, _) = cylsound_core::container::load_physical(&rec.join("xi")).unwrap();
    assert!(xi.values.iter().all(|v| v.im == 0.0));

    // evaluate against the stored truth
    let csv = tmp.path().join("delta.csv");
    let res = run(&[
        "evaluate",
        "--truth",
        out.join("xi_exact").to_str().unwrap(),
        "--recon",
        rec.join("xi").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("max_z delta_L2"), "{stdout}");
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("z,delta_l2"));
    assert_eq!(table.lines().count(), 9); // header + nz rows
}

#[test]
fn zero_contrast_produces_zero_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with_model(
        tmp.path(),
        r#"{ "id": "custom", "terms": [], "combine": "sum" }"#,
    );
    let out = tmp.path().join("fwd");
    let res = run(&[
        "forward",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let (w, _) = cylsound_core::container::load_physical(&out.join("omega-2").join("w")).unwrap();
    assert!(w.values.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{ "geometry": { "a": 1.0, "r0": 5.0, "b": 4.0, "z_half": 2.0 } }"#)
        .unwrap();
    let res = run(&[
        "forward",
        "--config",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("geometry.b"), "stderr: {err}");
    // no partial outputs on validation failure
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn missing_data_dir_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let res = run(&[
        "invert",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        tmp.path().join("rec").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(5));
}

#[test]
fn noise_is_calibrated_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("fwd");
    assert!(run(&[
        "forward",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .status
    .success());

    let n1 = tmp.path().join("n1");
    let n2 = tmp.path().join("n2");
    for dir in [&n1, &n2] {
        let res = run(&[
            "noise",
            "--data",
            out.join("omega-2").to_str().unwrap(),
            "--delta",
            "1e-2",
            "--seed",
            "11",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    }
    let p1 = std::fs::read(n1.join("w").join("payload.bin")).unwrap();
    let p2 = std::fs::read(n2.join("w").join("payload.bin")).unwrap();
    assert_eq!(p1, p2, "same seed must reproduce identical payloads");

    let provenance = std::fs::read_to_string(n1.join("noise.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&provenance).unwrap();
    let measured = v["measured_relative_norm"].as_f64().unwrap();
    assert!((measured - 1e-2).abs() < 1e-10, "measured {measured}");

    // a different seed changes the payload
    let n3 = tmp.path().join("n3");
    assert!(run(&[
        "noise",
        "--data",
        out.join("omega-2").to_str().unwrap(),
        "--delta",
        "1e-2",
        "--seed",
        "12",
        "--out",
        n3.to_str().unwrap(),
    ])
    .status
    .success());
    let p3 = std::fs::read(n3.join("w").join("payload.bin")).unwrap();
    assert_ne!(p1, p3);
}

#[test]
fn greens_check_reports_and_exits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let res = run(&["greens-check", "--config", cfg.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{stdout}");
    for check in [
        "cylinder-function wronskians",
        "resonance scan",
        "kernel symmetry",
        "neumann wall derivative",
        "point-source jump",
        "modal equation residual",
    ] {
        assert!(stdout.contains(&format!("{check}: pass")), "{stdout}");
    }

    // an undamped run tuned onto a waveguide cutoff reports resonance
    let cfg_res = tmp.path().join("res.json");
    std::fs::write(
        &cfg_res,
        r#"{
  "grid": { "nr": 6, "nrp": 7, "nphi": 8, "nz": 8 },
  "omegas": [0.95792649255187807],
  "greens": { "eps": 0.0, "kernel": "waveguide" }
}"#,
    )
    .unwrap();
    let res = run(&["greens-check", "--config", cfg_res.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stdout));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("resonance scan: FAIL"), "{stdout}");

    // damping restores a finite kernel
    let res = run(&[
        "greens-check",
        "--config",
        cfg_res.to_str().unwrap(),
        "--eps",
        "1e-6",
    ]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(
        stdout.contains("resonance scan: pass") || stdout.contains("flagged modes"),
        "{stdout}"
    );
}

#[test]
fn bench_emits_append_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("bench");
    for _ in 0..2 {
        let res = run(&[
            "bench",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("nr,nphi,nz,"));
    assert_eq!(lines.len(), 3, "two runs append two records:\n{csv}");
    assert_eq!(lines.iter().filter(|l| l.starts_with("nr,")).count(), 1);
}

#[test]
fn invert_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("fwd");
    assert!(run(&[
        "forward",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .status
    .success());
    let r1 = tmp.path().join("r1");
    let r2 = tmp.path().join("r2");
    for dir in [&r1, &r2] {
        assert!(run(&[
            "invert",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            out.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .status
        .success());
    }
    let x1 = std::fs::read(r1.join("xi").join("payload.bin")).unwrap();
    let x2 = std::fs::read(r2.join("xi").join("payload.bin")).unwrap();
    assert_eq!(x1, x2, "identical config and data must reproduce bit-identical output");
}
