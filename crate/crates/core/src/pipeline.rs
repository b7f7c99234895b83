//! Dataset construction: instrument, trace, filter, decontaminate and route
//! each (program, input) sample into SFT/RL, terminal-only or rejected.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Parsed};
use crate::executor::Executor;
use crate::instrument::{instrument, InstrumentationConfig};
use crate::model::{
    write_jsonl, ExecutionTrace, InstrumentedProgram, JsonlError, SourceProgram, TaskInstance,
    TaskKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_trace_lines: usize,
    pub ngram_k: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub max_static_anchors: usize,
    /// Run original and instrumented programs and reject on differing results.
    pub verify_equivalence: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_trace_lines: 10,
            ngram_k: 10,
            dropout_rate: 0.0,
            seed: 0,
            max_static_anchors: InstrumentationConfig::default().max_static_anchors,
            verify_equivalence: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("anchor statistics need at least one sample")]
    EmptySet,
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: JsonlError,
    },
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_trace_lines == 0 {
            return Err(PipelineError::InvalidConfig("max_trace_lines must be >= 1".into()));
        }
        if self.ngram_k == 0 {
            return Err(PipelineError::InvalidConfig("ngram_k must be >= 1".into()));
        }
        self.instrumentation()
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    fn instrumentation(&self) -> InstrumentationConfig {
        InstrumentationConfig {
            max_static_anchors: self.max_static_anchors,
            dropout_rate: self.dropout_rate,
            rng_seed: self.seed,
            ..Default::default()
        }
    }
}

/// A program as read from disk; a missing id becomes `train_<index>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub entry_name: String,
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub id: String,
    pub text: String,
}

pub fn assign_ids(records: Vec<ProgramRecord>) -> Vec<SourceProgram> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| SourceProgram {
            id: r.id.filter(|s| !s.is_empty()).unwrap_or_else(|| format!("train_{i}")),
            entry_name: r.entry_name,
            source_text: r.source_text,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub origin_id: String,
    pub task_kind: TaskKind,
    pub entry_name: String,
    pub source_text: String,
    pub condition: String,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlRecord {
    pub id: String,
    #[serde(flatten)]
    pub instance: TaskInstance,
    pub trace: ExecutionTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorStats {
    pub mean: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub samples: usize,
    pub sft: usize,
    pub rl: usize,
    pub terminal_only: usize,
    pub rejected: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    /// Over the runtime anchor counts of every accepted sample.
    pub anchors: Option<AnchorStats>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub sft: Vec<SftRecord>,
    pub rl: Vec<RlRecord>,
    pub terminal_only: Vec<RlRecord>,
    pub rejected: Vec<Rejection>,
}

impl PipelineOutput {
    pub fn stats(&self) -> PipelineStats {
        let mut by_reason = BTreeMap::new();
        for r in &self.rejected {
            *by_reason.entry(r.reason.clone()).or_insert(0) += 1;
        }
        // Each accepted sample yields one record per task kind.
        let ns: Vec<usize> = self
            .rl
            .iter()
            .chain(&self.terminal_only)
            .filter(|r| r.instance.task_kind == TaskKind::OutputPrediction)
            .map(|r| r.trace.n())
            .collect();
        PipelineStats {
            samples: ns.len() + self.rejected.len(),
            sft: self.sft.len(),
            rl: self.rl.len(),
            terminal_only: self.terminal_only.len(),
            rejected: self.rejected.len(),
            rejected_by_reason: by_reason,
            anchors: anchor_stats(&ns).ok(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Write {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        write_file(&dir.join("sft.jsonl"), &self.sft)?;
        write_file(&dir.join("rl.jsonl"), &self.rl)?;
        write_file(&dir.join("terminal_only.jsonl"), &self.terminal_only)?;
        write_file(&dir.join("rejected.jsonl"), &self.rejected)?;
        let path = dir.join("stats.json");
        let wrap = |source: JsonlError| PipelineError::Write {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(&path).map_err(|e| wrap(e.into()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.stats()).map_err(|e| wrap(e.into()))?;
        w.write_all(b"\n").map_err(|e| wrap(e.into()))?;
        w.flush().map_err(|e| wrap(e.into()))
    }
}

fn write_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let wrap = |source: JsonlError| PipelineError::Write {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(|e| wrap(e.into()))?;
    write_jsonl(BufWriter::new(file), items).map_err(wrap)
}

/// Lowercased tokens, split on whitespace and punctuation (`_` joins words).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// All k-grams of a benchmark corpus.
pub struct NgramIndex {
    k: usize,
    grams: HashSet<String>,
}

impl NgramIndex {
    pub fn new<'a>(corpus: impl IntoIterator<Item = &'a str>, k: usize) -> Self {
        let mut grams = HashSet::new();
        for text in corpus {
            let tokens = tokenize(text);
            for w in tokens.windows(k.max(1)) {
                grams.insert(w.join(" "));
            }
        }
        Self { k: k.max(1), grams }
    }

    /// First k-gram of `text` also present in the corpus.
    pub fn witness(&self, text: &str) -> Option<String> {
        tokenize(text)
            .windows(self.k)
            .map(|w| w.join(" "))
            .find(|g| self.grams.contains(g))
    }
}

/// Splits samples into kept and removed; each removal carries its witness.
pub fn decontaminate<T>(
    samples: Vec<T>,
    text_of: impl Fn(&T) -> &str,
    bench: &NgramIndex,
) -> (Vec<T>, Vec<(T, String)>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for s in samples {
        match bench.witness(text_of(&s)) {
            Some(w) => removed.push((s, w)),
            None => kept.push(s),
        }
    }
    (kept, removed)
}

pub fn anchor_stats(ns: &[usize]) -> Result<AnchorStats, PipelineError> {
    if ns.is_empty() {
        return Err(PipelineError::EmptySet);
    }
    let mut sorted = ns.to_vec();
    sorted.sort_unstable();
    let len = sorted.len();
    let median = if len % 2 == 1 {
        sorted[len / 2] as f64
    } else {
        (sorted[len / 2 - 1] + sorted[len / 2]) as f64 / 2.0
    };
    Ok(AnchorStats {
        mean: sorted.iter().sum::<usize>() as f64 / len as f64,
        median,
        min: sorted[0],
        max: sorted[len - 1],
    })
}

enum Routed {
    Accepted {
        id: String,
        program: InstrumentedProgram,
        input: String,
        trace: ExecutionTrace,
    },
    Rejected(Rejection),
}

fn reject(id: &str, reason: impl Into<String>, detail: impl Into<String>) -> Routed {
    Routed::Rejected(Rejection {
        id: id.to_string(),
        reason: reason.into(),
        detail: detail.into(),
    })
}

fn process(
    program: &SourceProgram,
    input: &str,
    id: &str,
    cfg: &PipelineConfig,
    executor: &Executor,
) -> Routed {
    if let Err(e) = executor.syntax_check(&program.source_text) {
        return reject(id, "syntax_error", e.to_string());
    }
    let inst = match instrument(program, &cfg.instrumentation()) {
        Ok(p) => p,
        Err(e) => return reject(id, e.reason(), e.to_string()),
    };
    let trace = match executor.generate_trace(&inst, input) {
        Ok(t) => t,
        Err(e) => return reject(id, e.reason(), e.to_string()),
    };
    if trace.n() > cfg.max_trace_lines {
        return reject(id, "too_long", format!("{} trace lines", trace.n()));
    }
    if cfg.verify_equivalence {
        match executor.check_equivalence(program, &inst, &[input.to_string()]) {
            Ok(true) => {}
            Ok(false) => return reject(id, "behavior_changed", ""),
            Err(e) => return reject(id, e.reason(), e.to_string()),
        }
    }
    Routed::Accepted {
        id: id.to_string(),
        program: inst,
        input: input.to_string(),
        trace,
    }
}

/// True when the serialized target parses back to the same payloads; fails
/// for values that contain tag markers.
fn target_round_trips(text: &str, trace: &ExecutionTrace, answer: &str, task: TaskKind) -> bool {
    let Ok(Parsed::Valid(t)) = codec::parse(text, task) else {
        return false;
    };
    t.answer == answer.trim()
        && t.predicted_states.len() == trace.n()
        && t.predicted_states.iter().zip(trace.lines()).all(|(p, l)| *p == l.trim())
}

/// Runs the whole pipeline. Output order follows `inputs`; the result is a
/// pure function of the arguments.
pub fn build(
    programs: &[SourceProgram],
    inputs: &[InputRecord],
    bench: &[BenchRecord],
    cfg: &PipelineConfig,
    executor: &Executor,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let by_id: HashMap<&str, &SourceProgram> = programs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut seen = HashSet::new();
    let first_use: Vec<bool> = inputs.iter().map(|r| seen.insert(r.id.as_str())).collect();

    let routed: Vec<Routed> = inputs
        .par_iter()
        .zip(first_use.par_iter())
        .map(|(rec, &first)| {
            if !first {
                return reject(&rec.id, "duplicate_input_id", "");
            }
            match by_id.get(rec.id.as_str()) {
                Some(p) => process(p, &rec.input, &rec.id, cfg, executor),
                None => reject(&rec.id, "unknown_program", ""),
            }
        })
        .collect();

    let index = NgramIndex::new(bench.iter().map(|b| b.text.as_str()), cfg.ngram_k);
    let mut out = PipelineOutput::default();
    for r in routed {
        let (id, program, input, trace) = match r {
            Routed::Rejected(rej) => {
                out.rejected.push(rej);
                continue;
            }
            Routed::Accepted {
                id,
                program,
                input,
                trace,
            } => (id, program, input, trace),
        };
        let original = by_id[id.as_str()];
        if let Some(w) = index.witness(&original.source_text) {
            out.rejected.push(Rejection {
                id,
                reason: "contaminated".into(),
                detail: w,
            });
            continue;
        }
        let output = trace.final_value.clone();
        let tasks = [
            TaskInstance::output_prediction(program.clone(), &input, &output),
            TaskInstance::input_prediction(program.clone(), &input, &output),
        ];
        let targets: Vec<String> = tasks
            .iter()
            .map(|t| codec::serialize_target(&trace, &t.target, t.task_kind, &t.gt_input))
            .collect();
        let clean = tasks
            .iter()
            .zip(&targets)
            .all(|(t, text)| target_round_trips(text, &trace, &t.target, t.task_kind));
        if !clean {
            out.rejected.push(Rejection {
                id,
                reason: "unserializable_target".into(),
                detail: String::new(),
            });
            continue;
        }
        for (task, target_text) in tasks.into_iter().zip(targets) {
            let suffix = match task.task_kind {
                TaskKind::OutputPrediction => "output",
                TaskKind::InputPrediction => "input",
            };
            let rl = RlRecord {
                id: format!("{id}:{suffix}"),
                instance: task,
                trace: trace.clone(),
            };
            if trace.n() <= 1 {
                out.terminal_only.push(rl);
                continue;
            }
            out.sft.push(SftRecord {
                id: rl.id.clone(),
                origin_id: id.clone(),
                task_kind: rl.instance.task_kind,
                entry_name: program.entry_name.clone(),
                source_text: program.source_text.clone(),
                condition: rl.instance.condition.clone(),
                target_text,
            });
            out.rl.push(rl);
        }
    }
    Ok(out)
}
