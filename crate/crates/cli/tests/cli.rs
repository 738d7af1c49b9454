use std::path::Path;
use std::process::{Command, Output};

fn rashomon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rashomon")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, "[data]\nsamples = 40\n").unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_succeeds() {
    assert_eq!(code(&rashomon(&["--help"])), 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&rashomon(&["frobnicate"])), 2);
    assert_eq!(code(&rashomon(&["train-head", "--scheme", "4"])), 2);
    assert_eq!(code(&rashomon(&["symreg", "--mode", "l1"])), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seeds = 0\n").unwrap();
    let o = rashomon(&["--config", p.to_str().unwrap(), "gen-data"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("run");
    let o = rashomon(&["--out", out.to_str().unwrap(), "--jobs", "0", "gen-data"]);
    assert_eq!(code(&o), 2);
    let o = rashomon(&["--out", out.to_str().unwrap(), "attack", "--space", "latent", "--restrict", "a,b"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_dependency_exits_3_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = rashomon(&["--out", out.to_str().unwrap(), "report"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gen-data"), "{err}");
}

#[test]
fn gen_data_writes_a_manifest_and_honours_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = rashomon(&["--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11", "--jobs", "1", "gen-data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: String = std::fs::read_to_string(out.join("manifests/gen-data.json")).unwrap();
    assert!(m.contains("\"seed\": 11"), "{m}");
    assert!(out.join("data/factors.csv").exists());
    let o = rashomon(&["--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "12", "train-vae"]);
    assert_eq!(code(&o), 3, "data from another seed is stale");
}
