use std::path::Path;
use std::process::{Command, Output};

use snaklat::model::anti_continuum_pattern;
use snaklat::{Family, Field, Nonlinearity, PatternId, Symmetry};

fn run(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}.json"));
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_snaklat"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn config(n_d: usize, run: &str) -> String {
    format!(r#"{{"model":{{"family":"cubic_quintic"}},"grid":{{"N_d":{n_d},"symmetry":"off_site"}},"run":{run}}}"#)
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn solve_converges_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "solve", &config(8, r#"{"pattern":{"n":3,"m":2,"variant":"u_bar"},"mu":0.5,"d":1e-3}"#), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = read_json(&tmp.path().join("out/convergence.json"));
    assert!(log["residual"].as_f64().unwrap() <= 1e-10);
    let m = read_json(&tmp.path().join("out/manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["grid"]["N_d"], 8);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(tmp.path().join("out/profile.csv").exists());
}

#[test]
fn solve_at_zero_coupling_returns_the_pattern() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "solve", &config(6, r#"{"pattern":{"n":2,"m":1,"variant":"v_bar"},"mu":0.3,"d":0.0}"#), &[]);
    assert!(out.status.success());
    let u = Field::read_json(&tmp.path().join("out/profile.json")).unwrap();
    let nl = Nonlinearity::builtin(Family::CubicQuintic).unwrap();
    let exact = anti_continuum_pattern(&PatternId::vbar(2, 1, Symmetry::OffSite), &nl, 0.3, 6).unwrap();
    assert_eq!(u.values(), exact.values());
}

#[test]
fn oversize_pattern_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "solve", &config(4, r#"{"pattern":{"n":5,"m":1,"variant":"u_bar"},"mu":0.5,"d":1e-3}"#), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pattern exceeds domain"));
}

#[test]
fn unknown_keys_exit_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "solve", &config(4, r#"{"pattern":{"n":2,"m":1,"variant":"u_bar"},"mu":0.5,"d":0,"colour":1}"#), &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(tmp.path(), "reduced", &config(4, r#"{"system":"PitchInterior","extra":true}"#), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn snake_outside_window_ends_immediately() {
    let tmp = tempfile::tempdir().unwrap();
    let run_cfg = r#"{"start":{"n":1,"m":1,"variant":"u_bar"},"step":{"p_min":1.2,"p_max":1.5},"stability":false}"#;
    let out = run(tmp.path(), "snake", &config(4, run_cfg), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("out/branch.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().ends_with("end"));
}

#[test]
fn reduced_writes_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "reduced", &config(4, r#"{"system":"TransInterior","points":11}"#), &[]);
    assert!(out.status.success());
    let f = read_json(&tmp.path().join("out/reduced_fold.json"));
    assert!((f["d"].as_f64().unwrap() - 0.125).abs() < 1e-14);
    let text = std::fs::read_to_string(tmp.path().join("out/reduced.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(4, r#"{"pattern":{"n":2,"m":1,"variant":"u_bar"},"mu":0.5,"d":1e-3,"t_end":5.0}"#);
    let a = run(tmp.path(), "simulate", &cfg, &["--seed", "7"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first = std::fs::read(tmp.path().join("out/trajectory.csv")).unwrap();
    run(tmp.path(), "simulate", &cfg, &["--seed", "7"]);
    assert_eq!(first, std::fs::read(tmp.path().join("out/trajectory.csv")).unwrap());
    run(tmp.path(), "simulate", &cfg, &["--seed", "8"]);
    assert_ne!(first, std::fs::read(tmp.path().join("out/trajectory.csv")).unwrap());
    assert_eq!(read_json(&tmp.path().join("out/manifest.json"))["config"]["seed"], 8);
}

#[test]
fn isola_closes_at_small_coupling() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "isola", &config(14, r#"{"d":0.12}"#), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&tmp.path().join("out/isola.json"))["closed"], true);
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_snaklat"))
        .args(["solve", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
