//! Recorded shim results, replayed so tests and offline runs need no shim.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocol::{ShimResponse, ShimStatus};
use super::ExecError;
use crate::model::{read_jsonl, write_jsonl};

/// One recorded run. Failed runs keep their status and error text; runs whose
/// stdout is not all `name: value` lines keep the raw lines in `stdout`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub origin_id: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_sha256: Option<String>,
    #[serde(default)]
    pub events: Vec<(String, String)>,
    #[serde(default)]
    pub final_value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ShimStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stdout: Option<Vec<String>>,
}

impl FixtureRecord {
    pub(crate) fn from_response(origin_id: &str, source: &str, input: &str, resp: &ShimResponse) -> Self {
        let events: Option<Vec<(String, String)>> =
            resp.stdout_lines.iter().map(|l| super::split_trace_line(l)).collect();
        let (events, stdout) = match events {
            Some(ev) => (ev, None),
            None => (Vec::new(), Some(resp.stdout_lines.clone())),
        };
        Self {
            origin_id: origin_id.to_string(),
            input: input.trim().to_string(),
            source_sha256: Some(source_digest(source)),
            events,
            final_value: resp.return_repr.clone().unwrap_or_default(),
            status: (resp.status != ShimStatus::Ok).then_some(resp.status),
            error_text: resp.error_text.clone(),
            stdout,
        }
    }

    pub(crate) fn to_response(&self) -> ShimResponse {
        let status = self.status.unwrap_or(ShimStatus::Ok);
        let stdout_lines = match &self.stdout {
            Some(lines) => lines.clone(),
            None => self.events.iter().map(|(n, v)| format!("{n}: {v}")).collect(),
        };
        ShimResponse {
            status,
            stdout_lines,
            return_repr: (status == ShimStatus::Ok).then(|| self.final_value.clone()),
            error_text: self.error_text.clone(),
            duration_ms: 0.0,
        }
    }
}

pub fn source_digest(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

/// Lookup prefers an exact source digest; records written by hand without a
/// digest are matched on `(origin_id, input)`.
#[derive(Debug, Default, Clone)]
pub struct FixtureStore {
    records: Vec<FixtureRecord>,
    by_digest: HashMap<(String, String), usize>,
    by_origin: HashMap<(String, String), usize>,
}

impl FixtureStore {
    pub fn new(records: Vec<FixtureRecord>) -> Self {
        let mut store = Self::default();
        for r in records {
            store.insert(r);
        }
        store
    }

    pub fn load(path: &Path) -> Result<Self, ExecError> {
        let wrap = |source| ExecError::Fixture {
            path: path.display().to_string(),
            source,
        };
        let file = File::open(path).map_err(|e| wrap(e.into()))?;
        let records = read_jsonl(BufReader::new(file)).map_err(wrap)?;
        Ok(Self::new(records))
    }

    pub fn save(&self, path: &Path) -> Result<(), ExecError> {
        let wrap = |source| ExecError::Fixture {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(|e| wrap(e.into()))?;
        write_jsonl(BufWriter::new(file), &self.records).map_err(wrap)
    }

    /// Later records for the same key replace earlier ones.
    pub fn insert(&mut self, record: FixtureRecord) {
        let input = record.input.trim().to_string();
        let idx = self.records.len();
        match &record.source_sha256 {
            Some(d) => self.by_digest.insert((d.clone(), input), idx),
            None => self.by_origin.insert((record.origin_id.clone(), input), idx),
        };
        self.records.push(record);
    }

    pub fn records(&self) -> &[FixtureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, origin_id: &str, source: &str, input: &str) -> Option<&FixtureRecord> {
        let input = input.trim().to_string();
        self.by_digest
            .get(&(source_digest(source), input.clone()))
            .or_else(|| self.by_origin.get(&(origin_id.to_string(), input)))
            .map(|&i| &self.records[i])
    }
}
