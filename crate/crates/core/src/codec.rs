//! Tagged response format: `<reasoning>`, `<print>`, `<input>` and `<answer>`
//! blocks. Parsing is flat and case-sensitive; text outside tags is ignored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Block, ExecutionTrace, TaskKind, Trajectory};

const TAGS: [&str; 4] = ["reasoning", "print", "input", "answer"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unbalanced tags: {0}")]
    UnbalancedTags(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeError {
    #[error("no <answer> block")]
    MissingAnswer,
    #[error("more than one <answer> block")]
    MultipleAnswers,
    #[error("<answer> is not the last block")]
    AnswerNotLast,
    #[error("input task does not open with <reasoning><input>")]
    MissingInput,
    #[error("unexpected <input> block at position {index}")]
    UnexpectedInput { index: usize },
    #[error("<{tag}> at position {index} is not preceded by <reasoning>")]
    MissingReasoning { index: usize, tag: String },
    #[error("<reasoning> at position {index} follows another <reasoning>")]
    RepeatedReasoning { index: usize },
}

/// Result of parsing a well-tagged response. Shape violations keep the
/// blocks so the caller can still record (and zero-score) the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Valid(Trajectory),
    Malformed { blocks: Vec<Block>, error: ShapeError },
}

impl Parsed {
    pub fn blocks(&self) -> &[Block] {
        match self {
            Parsed::Valid(t) => &t.blocks,
            Parsed::Malformed { blocks, .. } => blocks,
        }
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            Parsed::Valid(t) => Some(t),
            Parsed::Malformed { .. } => None,
        }
    }

    pub fn shape_error(&self) -> Option<&ShapeError> {
        match self {
            Parsed::Valid(_) => None,
            Parsed::Malformed { error, .. } => Some(error),
        }
    }
}

/// Raw model output awaiting parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub instance_id: String,
    pub text: String,
}

/// Splits `text` into blocks without checking their order.
pub fn scan_blocks(text: &str) -> Result<Vec<Block>, CodecError> {
    let mut blocks = Vec::new();
    // (tag, payload start)
    let mut open: Option<(&str, usize)> = None;
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('<') {
        let at = pos + rel;
        let rest = &text[at..];
        let Some((tag, closing, len)) = match_tag(rest) else {
            pos = at + 1;
            continue;
        };
        match (open, closing) {
            (None, false) => open = Some((tag, at + len)),
            (None, true) => {
                return Err(CodecError::UnbalancedTags(format!("stray </{tag}> at byte {at}")))
            }
            (Some((cur, start)), true) if cur == tag => {
                blocks.push(make_block(tag, text[start..at].trim()));
                open = None;
            }
            (Some((cur, _)), true) => {
                return Err(CodecError::UnbalancedTags(format!(
                    "</{tag}> at byte {at} closes <{cur}>"
                )))
            }
            (Some((cur, _)), false) => {
                return Err(CodecError::UnbalancedTags(format!(
                    "<{tag}> at byte {at} opened inside <{cur}>"
                )))
            }
        }
        pos = at + len;
    }
    match open {
        Some((tag, _)) => Err(CodecError::UnbalancedTags(format!("<{tag}> is never closed"))),
        None => Ok(blocks),
    }
}

fn match_tag(s: &str) -> Option<(&'static str, bool, usize)> {
    let (closing, body) = match s.strip_prefix("</") {
        Some(b) => (true, b),
        None => (false, &s[1..]),
    };
    TAGS.iter().find_map(|tag| {
        let after = body.strip_prefix(tag)?;
        after
            .starts_with('>')
            .then(|| (*tag, closing, tag.len() + 2 + usize::from(closing)))
    })
}

fn make_block(tag: &str, payload: &str) -> Block {
    let payload = payload.to_string();
    match tag {
        "reasoning" => Block::Reasoning(payload),
        "print" => Block::Print(payload),
        "input" => Block::Input(payload),
        _ => Block::Answer(payload),
    }
}

/// Checks the block sequence against the task's shape:
/// output `(R P)* R A`, input `R I (R P)* R A`.
pub fn validate(blocks: Vec<Block>, task: TaskKind) -> Result<Trajectory, (Vec<Block>, ShapeError)> {
    match check_shape(&blocks, task) {
        Ok(()) => Ok(build(blocks)),
        Err(e) => Err((blocks, e)),
    }
}

fn check_shape(blocks: &[Block], task: TaskKind) -> Result<(), ShapeError> {
    let answers = blocks.iter().filter(|b| matches!(b, Block::Answer(_))).count();
    match answers {
        0 => return Err(ShapeError::MissingAnswer),
        1 => {}
        _ => return Err(ShapeError::MultipleAnswers),
    }
    if !matches!(blocks.last(), Some(Block::Answer(_))) {
        return Err(ShapeError::AnswerNotLast);
    }
    if task == TaskKind::InputPrediction && !matches!(blocks.get(1), Some(Block::Input(_))) {
        return Err(ShapeError::MissingInput);
    }
    for (index, block) in blocks.iter().enumerate() {
        match (index % 2, block) {
            (0, Block::Reasoning(_)) => {}
            (0, other) => {
                return Err(ShapeError::MissingReasoning {
                    index,
                    tag: other.tag().to_string(),
                })
            }
            (_, Block::Reasoning(_)) => return Err(ShapeError::RepeatedReasoning { index }),
            (_, Block::Input(_)) if task == TaskKind::InputPrediction && index == 1 => {}
            (_, Block::Input(_)) => return Err(ShapeError::UnexpectedInput { index }),
            _ => {}
        }
    }
    Ok(())
}

fn build(blocks: Vec<Block>) -> Trajectory {
    let mut predicted_states = Vec::new();
    let mut committed_input = None;
    let mut answer = String::new();
    for b in &blocks {
        match b {
            Block::Print(t) => predicted_states.push(t.clone()),
            Block::Input(t) => committed_input = Some(t.clone()),
            Block::Answer(t) => answer = t.clone(),
            Block::Reasoning(_) => {}
        }
    }
    Trajectory {
        blocks,
        predicted_states,
        committed_input,
        answer,
    }
}

pub fn parse(text: &str, task: TaskKind) -> Result<Parsed, CodecError> {
    let blocks = scan_blocks(text)?;
    Ok(from_blocks(blocks, task))
}

pub fn from_blocks(blocks: Vec<Block>, task: TaskKind) -> Parsed {
    match validate(blocks, task) {
        Ok(t) => Parsed::Valid(t),
        Err((blocks, error)) => Parsed::Malformed { blocks, error },
    }
}

/// The supervision target for a trace. Reasoning blocks are left empty.
pub fn serialize_target(
    trace: &ExecutionTrace,
    target: &str,
    task: TaskKind,
    gt_input: &str,
) -> String {
    let mut out = String::new();
    if task == TaskKind::InputPrediction {
        out.push_str("<reasoning></reasoning>\n");
        out.push_str(&format!("<input> {} </input>\n", gt_input.trim()));
    }
    for line in trace.lines() {
        out.push_str("<reasoning></reasoning>\n");
        out.push_str(&format!("<print> {} </print>\n", line.trim()));
    }
    out.push_str("<reasoning></reasoning>\n");
    out.push_str(&format!("<answer> {} </answer>\n", target.trim()));
    out
}

/// Renders blocks back to tagged text.
pub fn render_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        let tag = b.tag();
        out.push_str(&format!("<{tag}> {} </{tag}>\n", b.text()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrintPair {
    pub name: String,
    pub value: String,
    pub well_formed: bool,
}

/// Splits each print payload at its first `: `. A payload without the
/// separator, or with a name that is not an identifier, is ill-formed.
pub fn extract_print_pairs(t: &Trajectory) -> Vec<PrintPair> {
    t.predicted_states.iter().map(|p| split_pair(p)).collect()
}

pub fn split_pair(payload: &str) -> PrintPair {
    match payload.split_once(": ") {
        Some((name, value)) => PrintPair {
            name: name.to_string(),
            value: value.to_string(),
            well_formed: is_identifier(name),
        },
        None => PrintPair {
            name: String::new(),
            value: payload.to_string(),
            well_formed: false,
        },
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
