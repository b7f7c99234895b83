use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use trace_forge_core::model::{read_jsonl, write_jsonl};

/// A failure tied to one input record.
#[derive(Debug, thiserror::Error)]
#[error("record {id}: {message}")]
pub struct RecordError {
    pub id: String,
    pub message: String,
}

impl RecordError {
    pub fn new(id: &str, message: impl Display) -> Self {
        Self {
            id: id.to_string(),
            message: message.to_string(),
        }
    }
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Reads JSONL from a path, or stdin for `-`.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if is_stdio(path) {
        return read_jsonl(io::stdin().lock()).context("reading stdin");
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Writes JSONL to a path, or stdout when absent or `-`.
pub fn write_records<T: Serialize>(path: Option<&Path>, items: &[T]) -> Result<()> {
    match path.filter(|p| !is_stdio(p)) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write_jsonl(&mut w, items).with_context(|| format!("writing {}", path.display()))?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            write_jsonl(&mut w, items).context("writing stdout")?;
            w.flush()?;
        }
    }
    Ok(())
}
