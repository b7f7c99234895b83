//! Shared domain types and the JSONL record schemas used across the toolchain.
//!
//! Literals (inputs, outputs, answers) are kept as subject-language source
//! text. Value equality is left to the executor's canonicalization.

use std::io::{BufRead, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

/// A subject program before instrumentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceProgram {
    pub id: String,
    pub entry_name: String,
    pub source_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Assignment,
    PostLoop,
    ReturnVal,
}

/// One inserted anchor print.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorDecl {
    /// Label printed before the colon.
    pub name: String,
    /// 1-based line in the instrumented source.
    pub line: usize,
    pub kind: AnchorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LineMapError {
    #[error("line map must start at original line 1 and be contiguous (got {0} at position {1})")]
    NotTotal(usize, usize),
    #[error("line map is not strictly increasing at original line {0}")]
    NotMonotone(usize),
    #[error("original line {orig} maps below itself ({instr})")]
    Shrinks { orig: usize, instr: usize },
    #[error("line {0} is outside the map's domain")]
    OutOfDomain(usize),
}

/// Total, strictly monotone map from original to instrumented line numbers.
///
/// Serialized as `[[orig, instr], ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct LineMap {
    pairs: Vec<(usize, usize)>,
}

impl LineMap {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, LineMapError> {
        let mut prev_instr = 0;
        for (pos, &(orig, instr)) in pairs.iter().enumerate() {
            if orig != pos + 1 {
                return Err(LineMapError::NotTotal(orig, pos));
            }
            if instr <= prev_instr {
                return Err(LineMapError::NotMonotone(orig));
            }
            if instr < orig {
                return Err(LineMapError::Shrinks { orig, instr });
            }
            prev_instr = instr;
        }
        Ok(Self { pairs })
    }

    /// The map of a file with `lines` lines and no insertions.
    pub fn identity(lines: usize) -> Self {
        Self {
            pairs: (1..=lines).map(|l| (l, l)).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of original lines covered.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, orig: usize) -> Option<usize> {
        if orig == 0 {
            return None;
        }
        self.pairs.get(orig - 1).map(|&(_, instr)| instr)
    }

    /// `next ∘ self`: first apply `self`, then `next`.
    pub fn compose(&self, next: &LineMap) -> Result<LineMap, LineMapError> {
        let pairs = self
            .pairs
            .iter()
            .map(|&(orig, mid)| {
                next.get(mid)
                    .map(|instr| (orig, instr))
                    .ok_or(LineMapError::OutOfDomain(mid))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LineMap::new(pairs)
    }

    /// Record one line inserted so that it becomes instrumented line `at`;
    /// every mapped line at or after `at` moves down by one.
    pub fn insert_line(&mut self, at: usize) {
        for pair in &mut self.pairs {
            if pair.1 >= at {
                pair.1 += 1;
            }
        }
    }
}

impl TryFrom<Vec<(usize, usize)>> for LineMap {
    type Error = LineMapError;

    fn try_from(pairs: Vec<(usize, usize)>) -> Result<Self, Self::Error> {
        LineMap::new(pairs)
    }
}

impl From<LineMap> for Vec<(usize, usize)> {
    fn from(map: LineMap) -> Self {
        map.pairs
    }
}

/// A program with anchor prints inserted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentedProgram {
    pub origin_id: String,
    pub entry_name: String,
    pub source_text: String,
    pub anchors: Vec<AnchorDecl>,
    pub line_map: LineMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    OutputPrediction,
    InputPrediction,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "output" | "output_prediction" => Ok(TaskKind::OutputPrediction),
            "input" | "input_prediction" => Ok(TaskKind::InputPrediction),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

/// A concrete reasoning task over an instrumented program.
///
/// For output prediction `condition` is the input literal and `target` the
/// return value; for input prediction they swap roles. `gt_input` is always
/// the true input used to generate the ground-truth trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub program: InstrumentedProgram,
    pub task_kind: TaskKind,
    pub condition: String,
    pub target: String,
    pub gt_input: String,
}

impl TaskInstance {
    pub fn output_prediction(program: InstrumentedProgram, input: &str, output: &str) -> Self {
        Self {
            program,
            task_kind: TaskKind::OutputPrediction,
            condition: input.to_string(),
            target: output.to_string(),
            gt_input: input.to_string(),
        }
    }

    pub fn input_prediction(program: InstrumentedProgram, input: &str, output: &str) -> Self {
        Self {
            program,
            task_kind: TaskKind::InputPrediction,
            condition: output.to_string(),
            target: input.to_string(),
            gt_input: input.to_string(),
        }
    }
}

/// Interpreter-observed anchor events plus the canonical return value.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<(String, String)>,
    pub final_value: String,
}

impl ExecutionTrace {
    pub fn n(&self) -> usize {
        self.events.len()
    }

    /// The `name: value` lines exactly as the anchors print them.
    pub fn lines(&self) -> impl Iterator<Item = String> + '_ {
        self.events
            .iter()
            .map(|(name, value)| format!("{name}: {value}"))
    }
}

/// One tagged segment of a model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "text", rename_all = "lowercase")]
pub enum Block {
    Reasoning(String),
    Print(String),
    Input(String),
    Answer(String),
}

impl Block {
    pub fn tag(&self) -> &'static str {
        match self {
            Block::Reasoning(_) => "reasoning",
            Block::Print(_) => "print",
            Block::Input(_) => "input",
            Block::Answer(_) => "answer",
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Block::Reasoning(t) | Block::Print(t) | Block::Input(t) | Block::Answer(t) => t,
        }
    }
}

/// A shape-valid parsed response. Built by [`crate::codec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub blocks: Vec<Block>,
    pub predicted_states: Vec<String>,
    pub committed_input: Option<String>,
    pub answer: String,
}

// ---------------------------------------------------------------------------
// JSONL records

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub origin_id: String,
    #[serde(flatten)]
    pub trace: ExecutionTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub instance_id: String,
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<String>,
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Decode {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encode(#[from] serde_json::Error),
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Decode {
            line: idx + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), JsonlError> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
