//! Splits one-line compound bodies (`if c: return x`) and `;`-joined
//! statements onto their own lines wherever an anchor has to go next to them.
//! Splitting only ever adds line breaks, so every original line keeps a
//! distinct first position in the rewritten text.

use std::collections::BTreeMap;

use rustpython_parser::ast::{Stmt, StmtFunctionDef};

use super::source::{join_lines, SourceIndex};
use super::{wants_anchor, InstrumentError};
use crate::model::LineMap;

pub(crate) struct Relayout {
    pub text: String,
    pub map: LineMap,
}

struct Region {
    first: usize,
    last: usize,
    lines: Vec<String>,
    /// original line -> index into `lines`
    local: BTreeMap<usize, usize>,
}

/// Returns `None` when no statement that needs an anchor shares a line.
pub(crate) fn relayout(
    src: &SourceIndex<'_>,
    func: &StmtFunctionDef,
    unroll: bool,
) -> Result<Option<Relayout>, InstrumentError> {
    let mut regions = Vec::new();
    let def_indent = src.indent(src.line_of(func.range.start().to_usize()));
    collect_block(src, &func.body, def_indent, unroll, &mut regions)?;
    if regions.is_empty() {
        return Ok(None);
    }
    regions.sort_by_key(|r| r.first);

    let mut out: Vec<String> = Vec::new();
    let mut pairs = Vec::with_capacity(src.line_count());
    let mut regions = regions.into_iter().peekable();
    let mut line = 1;
    while line <= src.line_count() {
        if let Some(region) = regions.next_if(|r| r.first == line) {
            let base = out.len();
            for l in region.first..=region.last {
                pairs.push((l, base + region.local[&l] + 1));
            }
            out.extend(region.lines);
            line = region.last + 1;
        } else {
            out.push(src.line(line).to_string());
            pairs.push((line, out.len()));
            line += 1;
        }
    }
    let map = LineMap::new(pairs).map_err(|e| InstrumentError::Internal(e.to_string()))?;
    Ok(Some(Relayout {
        text: join_lines(&out, src.has_trailing_newline()),
        map,
    }))
}

fn collect_block(
    src: &SourceIndex<'_>,
    stmts: &[Stmt],
    parent_indent: &str,
    unroll: bool,
    regions: &mut Vec<Region>,
) -> Result<(), InstrumentError> {
    // Group siblings that share physical lines.
    let mut runs: Vec<Vec<&Stmt>> = Vec::new();
    for stmt in stmts {
        match runs.last_mut() {
            Some(run) if src.last_line(run[run.len() - 1]) == src.first_line(stmt) => run.push(stmt),
            _ => runs.push(vec![stmt]),
        }
    }
    for run in &runs {
        let shared = run.len() > 1 || !run.iter().all(|s| src.stands_alone(s));
        if shared && run.iter().any(|s| wants_anchor(s)) {
            if !unroll {
                return Err(InstrumentError::UnsupportedConstruct {
                    line: src.first_line(run[0]),
                    what: "statement sharing a line needs an anchor (unrolling disabled)".into(),
                });
            }
            regions.push(split_run(src, run, parent_indent));
        }
    }
    for stmt in stmts {
        let indent = src.indent(src.first_line(stmt));
        match stmt {
            Stmt::If(s) => {
                collect_block(src, &s.body, indent, unroll, regions)?;
                collect_block(src, &s.orelse, indent, unroll, regions)?;
            }
            Stmt::With(s) => collect_block(src, &s.body, indent, unroll, regions)?,
            _ => {}
        }
    }
    Ok(())
}

fn split_run(src: &SourceIndex<'_>, run: &[&Stmt], parent_indent: &str) -> Region {
    let first = src.first_line(run[0]);
    let last = src.last_line(run[run.len() - 1]);
    let prefix = &src.text()[src.line_start(first)..src.stmt_start(run[0])];
    let header_shared = !prefix.trim().is_empty();
    let indent = if header_shared {
        format!("{parent_indent}{}", src.indent_unit())
    } else {
        prefix.to_string()
    };

    // (text, original line of its first character)
    let mut pieces: Vec<(String, usize)> = Vec::new();
    if header_shared {
        pieces.push((prefix.trim_end().to_string(), first));
    }
    for stmt in run {
        pieces.push((format!("{indent}{}", src.slice(stmt)), src.first_line(stmt)));
    }
    let tail = &src.text()[src.stmt_end(run[run.len() - 1])..src.line_end(last)];
    let tail = tail.trim().trim_start_matches(';').trim();
    if !tail.is_empty() {
        if let Some(piece) = pieces.last_mut() {
            piece.0.push_str("  ");
            piece.0.push_str(tail);
        }
    }

    let mut lines = Vec::new();
    let mut local = BTreeMap::new();
    for (text, origin) in pieces {
        let start = lines.len();
        for (k, part) in text.split('\n').enumerate() {
            lines.push(part.to_string());
            local.entry(origin + k).or_insert(start + k);
        }
    }
    Region {
        first,
        last,
        lines,
        local,
    }
}
