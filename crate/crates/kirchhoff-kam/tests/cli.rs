//! Black-box tests of the command-line interface: subcommands, artifacts,
//! exit codes (0 success, 2 config error, 3 excluded frequency).

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kirchhoff"))
}

fn write_cfg(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn verify_subcommand_passes() {
    let out = bin().arg("verify").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all 8 checks passed"), "{stdout}");
}

#[test]
fn solve_writes_artifacts_and_reports() {
    let dir = std::env::temp_dir().join("kirchhoff_cli_solve");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = write_cfg(
        &dir,
        "cfg.json",
        r#"{
            "nu": 1, "omega": [1.465571], "eps": 1e-3, "gamma": 0.1, "tau": 0.5,
            "l_max": 6, "j_max": 6, "max_steps": 8, "residual_tol": 1e-11,
            "seed": 3, "stages": ["solve"]
        }"#,
    );
    let run_dir = dir.join("run");
    let out = bin().args(["solve", "--config"]).arg(&cfg).arg("--out").arg(&run_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "iterates.csv", "solution_v.json", "solution_p.json", "summary.json"] {
        assert!(run_dir.join(f).exists(), "missing artifact {f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("status=converged"), "{stdout}");
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = std::env::temp_dir().join("kirchhoff_cli_badcfg");
    let _ = std::fs::remove_dir_all(&dir);
    // gamma outside (0,1) is rejected at validation
    let cfg = write_cfg(
        &dir,
        "bad.json",
        r#"{ "nu": 1, "omega": [1.4], "eps": 1e-3, "gamma": 7.0, "l_max": 4, "j_max": 4 }"#,
    );
    let out = bin().args(["solve", "--config"]).arg(&cfg).arg("--out").arg(dir.join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    // schema violation (wrong type) is also a config error
    let cfg2 = write_cfg(
        &dir,
        "bad2.json",
        r#"{ "nu": "one", "eps": 1e-3, "l_max": 4, "j_max": 4 }"#,
    );
    let out2 = bin().args(["solve", "--config"]).arg(&cfg2).arg("--out").arg(dir.join("r2")).output().unwrap();
    assert_eq!(out2.status.code(), Some(2));
}

#[test]
fn excluded_frequency_exits_with_code_3() {
    let dir = std::env::temp_dir().join("kirchhoff_cli_excluded");
    let _ = std::fs::remove_dir_all(&dir);
    // omega = 10/7: no first-order resonance on the truncation (so the Newton
    // stage succeeds), but omega . l + (j + j') = 0 exactly at l = -7,
    // j + j' = 10, which the reducibility stage must surface as an exclusion
    let cfg = write_cfg(
        &dir,
        "cfg.json",
        r#"{
            "nu": 1, "omega": [1.4285714285714286], "eps": 1e-4, "gamma": 0.01, "tau": 0.5,
            "l_max": 6, "j_max": 6, "max_steps": 6, "residual_tol": 1e-11,
            "seed": 3, "stages": ["solve", "reduce"]
        }"#,
    );
    let out = bin().args(["reduce", "--config"]).arg(&cfg).arg("--out").arg(dir.join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reduce_blocks_feed_measure() {
    // blocks.json written by `reduce` round-trips through `measure --blocks`
    let dir = std::env::temp_dir().join("kirchhoff_cli_blocks");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = write_cfg(
        &dir,
        "cfg.json",
        r#"{
            "nu": 1, "omega": [1.465571], "omega_box": [[1.2, 1.8]], "eps": 1e-3,
            "gamma": 0.01, "tau": 0.5, "l_max": 6, "j_max": 6, "max_steps": 8,
            "residual_tol": 1e-11, "seed": 3, "measure_samples": 300
        }"#,
    );
    let run_dir = dir.join("run");
    let out = bin().args(["reduce", "--config"]).arg(&cfg).arg("--out").arg(&run_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let blocks = run_dir.join("blocks.json");
    assert!(blocks.exists());
    let csv = dir.join("measure.csv");
    let out = bin()
        .args(["measure", "--config"])
        .arg(&cfg)
        .arg("--blocks")
        .arg(&blocks)
        .args(["--gammas", "0.01,0.005"])
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn measure_subcommand_writes_csv() {
    let dir = std::env::temp_dir().join("kirchhoff_cli_measure");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = write_cfg(
        &dir,
        "cfg.json",
        r#"{
            "nu": 1, "omega_box": [[1.0, 2.0]], "eps": 1e-4, "gamma": 0.05,
            "l_max": 6, "j_max": 8, "seed": 0, "measure_samples": 500
        }"#,
    );
    let csv = dir.join("measure.csv");
    let out = bin()
        .args(["measure", "--config"])
        .arg(&cfg)
        .args(["--gammas", "0.1,0.05"])
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("gamma,excluded_fraction,ci_low,ci_high,worst_margin_index"));
    assert_eq!(text.lines().count(), 3);
}
