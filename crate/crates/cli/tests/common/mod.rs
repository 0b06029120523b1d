#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use newsim_cli::manifest::sha256_file;
use newsim_cli::PipelineConfig;

pub fn newsim(config: &Path, args: &[&str]) -> Output {
    newsim_with(config, args, &[])
}

pub fn newsim_with(config: &Path, args: &[&str], global: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_newsim"))
        .arg("--config")
        .arg(config)
        .args(global)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn newsim")
}

pub fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The JSON error object on the last non-empty stderr line.
pub fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success(), "expected a failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| !l.trim().is_empty()).expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr line is not JSON ({e}): {line}"))
}

/// Writes a fixture corpus of `pairs` pairs into `dir` and returns its config path.
pub fn fixture(dir: &Path, pairs: usize) -> PathBuf {
    let out = Command::new(env!("CARGO_BIN_EXE_newsim"))
        .args(["generate-fixture", "--out"])
        .arg(dir)
        .args(["--pairs", &pairs.to_string()])
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn newsim");
    assert_ok(&out, "generate-fixture");
    dir.join("newsim.toml")
}

pub fn load_config(path: &Path) -> PipelineConfig {
    PipelineConfig::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn save_config(path: &Path, cfg: &PipelineConfig) {
    std::fs::write(path, cfg.to_toml()).unwrap();
}

pub fn sha(path: &Path) -> String {
    sha256_file(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every regular file below `dir`, relative paths sorted.
pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(dir).unwrap().to_owned())
        .collect();
    out.sort();
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}
