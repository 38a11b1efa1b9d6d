#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_klaunch"));
    cmd.env_remove("KERNEL_LAUNCHER_WISDOM")
        .env_remove("KERNEL_LAUNCHER_CAPTURE")
        .env_remove("KERNEL_LAUNCHER_CAPTURE_DIR");
    cmd
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("klaunch runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Writes `vector_add.klcap` for a 1,000,000-element launch into `dir`.
pub fn synth_capture(dir: &Path) -> PathBuf {
    let def = fixture("vector_add.json");
    let out = run_in(
        dir,
        &[
            "capture",
            "synth",
            def.to_str().unwrap(),
            "--arg",
            "i32:1000000",
            "--arg",
            "out:f32:256",
            "--arg",
            "in:f32:256",
            "--arg",
            "in:f32:256",
            "--timestamp",
            "2024-01-01T00:00:00Z",
            "-o",
            "vector_add.klcap",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("vector_add.klcap")
}

/// Session log with the creation timestamp blanked.
pub fn without_timestamps(text: &str) -> String {
    let mut lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect();
    lines[0]["header"]["created"] = serde_json::Value::Null;
    lines
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}
