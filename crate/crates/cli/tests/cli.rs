use std::process::Command;

fn gradleak() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradleak"))
}

#[test]
fn gradcheck_passes() {
    let out = gradleak().arg("gradcheck").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 12);
    assert!(!text.contains("FAIL"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"seeds": [], "attack": {"restarts": 0}}"#).unwrap();
    let out = gradleak().args(["attack", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("seeds") && err.contains("restarts"), "{err}");
}

#[test]
fn attack_writes_report_and_overrides_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"name": "cli", "model": {"arch": "lenet_zhu", "width": 2},
            "dataset": {"source": "synthetic", "count": 2, "shape": [1, 6, 6], "classes": 3},
            "attack": {"max_iter": 10}, "seeds": [0, 1]}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = gradleak()
        .args(["attack", "--seed", "7", "--jobs", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("experiment,seed"));
    assert!(csv.lines().nth(1).unwrap().starts_with("cli,7,0,"));
    assert!(out_dir.join("report.csv").is_file());
    assert!(out_dir.join("images/cli_seed7_group0.pgm").is_file());
}

#[test]
fn analytic_recovers_mlp_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"arch": "mlp", "hidden": [16]},
            "dataset": {"source": "synthetic", "count": 3, "shape": [1, 4, 4], "classes": 3},
            "images": {"count": 3}, "seeds": [2]}"#,
    )
    .unwrap();
    let out = gradleak().args(["analytic", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let (truth, rest) = line.split_once("label ").unwrap().1.split_once(" recovered ").unwrap();
        assert_eq!(truth, rest.split(',').next().unwrap());
        assert!(line.contains("PSNR 100.00"), "{line}");
    }
}
