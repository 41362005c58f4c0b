#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A config small enough for a full synth → train → eval cycle in seconds.
pub const TINY_CONFIG: &str = include_str!("tiny.json");

pub fn write_tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY_CONFIG).unwrap();
    p
}

pub fn mindmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mindmesh"))
        .args(args)
        .env_remove("MINDMESH_THREADS")
        .output()
        .expect("spawn mindmesh")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesize the tiny dataset into `dir/data` and return its path.
pub fn tiny_dataset(dir: &Path, cfg: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = mindmesh(&["synth", "-c", s(cfg), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}
