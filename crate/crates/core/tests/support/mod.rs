#![allow(dead_code)]

pub mod corpus;

use std::path::PathBuf;
use std::process::Command;

use trace_forge_core::executor::{Executor, ShimCommand};

pub fn shim_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/support/shim.py")
}

pub fn python_available() -> bool {
    Command::new("python3")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

/// A live executor over the test shim, or `None` (with a note) without python3.
pub fn live_executor(pool: usize, timeout_ms: u64) -> Option<Executor> {
    if !python_available() {
        eprintln!("python3 not found; skipping live-shim test");
        return None;
    }
    Some(Executor::live(ShimCommand::for_path(shim_path()), pool, timeout_ms))
}

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
