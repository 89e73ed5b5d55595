use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_treemc")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn run_cmd(cmd: &str, config: &str, out: &Path, extra: &[&str]) -> (i32, String) {
    let cfg = fixture(config);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn oracle_rademacher_square_is_two() {
    let dir = TempDir::new().unwrap();
    let (code, text) = run_cmd("oracle", "oracle_rademacher.toml", dir.path(), &[]);
    assert_eq!(code, 0, "{text}");
    let r = report(dir.path());
    assert_eq!(r["pass"], true);
    let rows = r["results"]["rows"].as_array().unwrap();
    let k2 = rows.iter().find(|row| row["k"] == 2 && row["phi"] == "square").unwrap();
    assert_eq!(k2["exact_pairing"], 2.0);
    assert_eq!(k2["simulated_mean"], 2.0);
    assert_eq!(k2["simulated_se"], 0.0);
    let k0 = rows.iter().find(|row| row["k"] == 0 && row["phi"] == "square").unwrap();
    assert_eq!(k0["exact_pairing"], 0.0);
    assert!(dir.path().join("oracle.csv").exists());
}

#[test]
fn oracle_poisson_identity_mean() {
    let dir = TempDir::new().unwrap();
    let (code, text) = run_cmd("oracle", "oracle_poisson.toml", dir.path(), &["--format", "json"]);
    assert_eq!(code, 0, "{text}");
    let r = report(dir.path());
    let k3 = r["results"]["rows"].as_array().unwrap().iter().find(|row| row["k"] == 3).unwrap().clone();
    assert!((k3["exact_pairing"].as_f64().unwrap() - 0.375).abs() < 1e-12);
    assert!(!dir.path().join("oracle.csv").exists());
}

#[test]
fn failed_check_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let (code, text) = run_cmd("lln", "lln_impossible.toml", dir.path(), &[]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("FAIL lln_distance"));
    assert_eq!(report(dir.path())["pass"], false);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_cmd("lln", "unknown_key.toml", dir.path(), &[]).0, 1);
    assert_eq!(run_cmd("lln", "oracle_poisson.toml", dir.path(), &[]).0, 1);
    assert_eq!(run_cmd("oracle", "no_such_file.toml", dir.path(), &[]).0, 1);
    assert_eq!(run_cmd("oracle", "oracle_poisson.toml", dir.path(), &["--workers", "0"]).0, 1);
    assert_eq!(run(&["plot"]).0, 1);
    assert_eq!(run(&["oracle"]).0, 1);
    assert!(!dir.path().join("report.json").exists());
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "report.json" {
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                v["config"]["output"]["dir"] = Value::Null;
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    for cmd in ["simulate", "variance", "paircov", "martingale", "genchk", "mrca"] {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let (ca, ta) = run_cmd(cmd, "mixed.toml", a.path(), &["--workers", "1"]);
        let (cb, _) = run_cmd(cmd, "mixed.toml", b.path(), &["--workers", "8"]);
        assert_eq!(ca, cb, "{cmd}: {ta}");
        assert_ne!(ca, 1, "{cmd}: {ta}");
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(fa.len() >= 2, "{cmd}");
        assert!(fa == fb, "{cmd} outputs differ");
    }
}

#[test]
fn simulate_writes_dump_and_tables() {
    let dir = TempDir::new().unwrap();
    let (code, text) = run_cmd("simulate", "mixed.toml", dir.path(), &[]);
    assert_eq!(code, 0, "{text}");
    for name in ["generation.csv", "pairings.csv", "walk.csv", "generation_9.tcgb", "report.json", "timing.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let dump = std::fs::read(dir.path().join("generation_9.tcgb")).unwrap();
    assert_eq!(&dump[..4], b"TCGB");
    assert_eq!(dump.len(), 16 + 8 * 512);
    let walk = std::fs::read_to_string(dir.path().join("walk.csv")).unwrap();
    assert_eq!(walk.lines().count(), 1 + 25);
    assert!(walk.lines().nth(1).unwrap().starts_with("0,0.0000000000000000e0,5.0000000000000000e-1"));
}

#[test]
fn seed_override_changes_results_and_is_echoed() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run_cmd("simulate", "mixed.toml", a.path(), &[]);
    run_cmd("simulate", "mixed.toml", b.path(), &["--seed", "999"]);
    assert_eq!(report(b.path())["config"]["master_seed"], 999);
    assert_ne!(
        std::fs::read(a.path().join("generation.csv")).unwrap(),
        std::fs::read(b.path().join("generation.csv")).unwrap()
    );
}
