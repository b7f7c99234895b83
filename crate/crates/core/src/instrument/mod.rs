//! Deterministic anchor insertion.
//!
//! Anchors are `print(f'NAME: {NAME}')` statements placed inside the entry
//! function only:
//!
//! * after every assignment to a single simple name outside loop bodies,
//! * after each outermost loop, one per name the loop (re)assigns, in order of
//!   first assignment, restricted to names already bound before the loop,
//! * immediately before each `return <value>` outside loop bodies, printing
//!   `return_val`; a non-name return expression is first bound to `return_val`.
//!
//! Nothing is ever printed inside a `for`/`while` body. The original
//! statements are kept byte-for-byte apart from the return rewrite and the
//! splitting of one-line bodies that need an anchor.

mod layout;
mod source;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use rustpython_ast::Visitor;
use rustpython_parser::ast::{self, Expr, Stmt, StmtFunctionDef};
use rustpython_parser::Parse;
use thiserror::Error;

use crate::model::{AnchorDecl, AnchorKind, InstrumentedProgram, LineMap, SourceProgram};
use source::{join_lines, SourceIndex};

pub const RETURN_LABEL: &str = "return_val";

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentationConfig {
    pub max_static_anchors: usize,
    pub unroll_oneliners: bool,
    /// Probability of dropping each non-return anchor.
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for InstrumentationConfig {
    fn default() -> Self {
        Self {
            max_static_anchors: 10,
            unroll_oneliners: true,
            dropout_rate: 0.0,
            rng_seed: 0,
        }
    }
}

impl InstrumentationConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(InstrumentError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1]",
                self.dropout_rate
            )));
        }
        if self.max_static_anchors == 0 {
            return Err(InstrumentError::InvalidConfig(
                "max_static_anchors must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("entry function `{0}` is not defined at module level")]
    EntryNotFound(String),
    #[error("{count} static anchors exceed the limit of {max}")]
    TooManyAnchors { count: usize, max: usize },
    #[error("unsupported construct at line {line}: {what}")]
    UnsupportedConstruct { line: usize, what: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("internal instrumentation error: {0}")]
    Internal(String),
}

impl InstrumentError {
    /// Short machine-readable reason used in rejection logs.
    pub fn reason(&self) -> &'static str {
        match self {
            InstrumentError::Parse(_) => "parse_error",
            InstrumentError::EntryNotFound(_) => "entry_not_found",
            InstrumentError::TooManyAnchors { .. } => "too_many_anchors",
            InstrumentError::UnsupportedConstruct { .. } => "unsupported_construct",
            InstrumentError::InvalidConfig(_) => "invalid_config",
            InstrumentError::Internal(_) => "internal_error",
        }
    }
}

/// The exact statement text of an anchor printing `label` with the value of
/// the simple name `expr`.
pub fn anchor_statement(label: &str, expr: &str) -> String {
    format!("print(f'{label}: {{{expr}}}')")
}

/// Matches a line holding exactly one anchor statement.
pub fn is_anchor_line(line: &str) -> bool {
    anchor_regex().is_match(line)
}

pub fn count_static_anchors(program: &InstrumentedProgram) -> usize {
    program.anchors.len()
}

pub fn instrument(
    program: &SourceProgram,
    config: &InstrumentationConfig,
) -> Result<InstrumentedProgram, InstrumentError> {
    config.validate()?;
    let suite = parse_suite(&program.source_text)?;
    let src = SourceIndex::new(&program.source_text);
    let func = find_entry(&suite, &program.entry_name)?;
    check_supported(&src, func)?;

    let (text, pre_map) = match layout::relayout(&src, func, config.unroll_oneliners)? {
        None => (
            program.source_text.clone(),
            LineMap::identity(src.line_count()),
        ),
        Some(relaid) => (relaid.text, relaid.map),
    };

    let suite = parse_suite(&text)?;
    let src = SourceIndex::new(&text);
    let func = find_entry(&suite, &program.entry_name)?;
    if layout::relayout(&src, func, config.unroll_oneliners)?.is_some() {
        return Err(InstrumentError::Internal(
            "line splitting did not converge".into(),
        ));
    }

    let mut planner = Planner {
        src: &src,
        unroll: config.unroll_oneliners,
        edits: Vec::new(),
    };
    let mut bound = parameter_names(func);
    planner.block(&func.body, &mut bound)?;
    let mut edits = planner.edits;
    apply_dropout(&mut edits, config);

    let count = edits.iter().filter(|e| e.anchor().is_some()).count();
    if count > config.max_static_anchors {
        return Err(InstrumentError::TooManyAnchors {
            count,
            max: config.max_static_anchors,
        });
    }

    let assembled = assemble(&src, &edits)?;
    let line_map = pre_map
        .compose(&assembled.map)
        .map_err(|e| InstrumentError::Internal(e.to_string()))?;
    Ok(InstrumentedProgram {
        origin_id: program.id.clone(),
        entry_name: program.entry_name.clone(),
        source_text: assembled.text,
        anchors: assembled.anchors,
        line_map,
    })
}

fn parse_suite(text: &str) -> Result<Vec<Stmt>, InstrumentError> {
    ast::Suite::parse(text, "<program>").map_err(|e| InstrumentError::Parse(e.to_string()))
}

fn find_entry<'a>(suite: &'a [Stmt], name: &str) -> Result<&'a StmtFunctionDef, InstrumentError> {
    for stmt in suite {
        match stmt {
            Stmt::FunctionDef(f) if f.name.as_str() == name => return Ok(f),
            Stmt::AsyncFunctionDef(f) if f.name.as_str() == name => {
                return Err(InstrumentError::UnsupportedConstruct {
                    line: 1,
                    what: "async entry function".into(),
                })
            }
            _ => {}
        }
    }
    Err(InstrumentError::EntryNotFound(name.to_string()))
}

fn parameter_names(func: &StmtFunctionDef) -> BTreeSet<String> {
    let args = &func.args;
    let mut names: BTreeSet<String> = args
        .posonlyargs
        .iter()
        .chain(&args.args)
        .chain(&args.kwonlyargs)
        .map(|a| a.def.arg.to_string())
        .collect();
    for extra in [&args.vararg, &args.kwarg].into_iter().flatten() {
        names.insert(extra.arg.to_string());
    }
    names
}

/// Statements that carry an anchor when they sit outside a loop body.
pub(crate) fn wants_anchor(stmt: &Stmt) -> bool {
    match stmt {
        Stmt::Assign(s) => s.targets.len() == 1 && matches!(s.targets[0], Expr::Name(_)),
        Stmt::AugAssign(s) => matches!(*s.target, Expr::Name(_)),
        Stmt::AnnAssign(s) => s.value.is_some() && matches!(*s.target, Expr::Name(_)),
        Stmt::Return(s) => s.value.is_some(),
        _ => false,
    }
}

fn simple_assignment_target(stmt: &Stmt) -> Option<&str> {
    if !wants_anchor(stmt) {
        return None;
    }
    let target = match stmt {
        Stmt::Assign(s) => &s.targets[0],
        Stmt::AugAssign(s) => &*s.target,
        Stmt::AnnAssign(s) => &*s.target,
        _ => return None,
    };
    match target {
        Expr::Name(n) => Some(n.id.as_str()),
        _ => None,
    }
}

fn returned_name(stmt: Option<&Stmt>) -> Option<&str> {
    match stmt {
        Some(Stmt::Return(ast::StmtReturn {
            value: Some(value), ..
        })) => match value.as_ref() {
            Expr::Name(n) => Some(n.id.as_str()),
            _ => None,
        },
        _ => None,
    }
}

fn bind_target_names(expr: &Expr, out: &mut Vec<String>) {
    match expr {
        Expr::Name(n) => out.push(n.id.to_string()),
        Expr::Tuple(t) => t.elts.iter().for_each(|e| bind_target_names(e, out)),
        Expr::List(l) => l.elts.iter().for_each(|e| bind_target_names(e, out)),
        Expr::Starred(s) => bind_target_names(&s.value, out),
        _ => {}
    }
}

fn terminates(block: &[Stmt]) -> bool {
    matches!(
        block.last(),
        Some(Stmt::Return(_) | Stmt::Raise(_) | Stmt::Continue(_) | Stmt::Break(_))
    )
}

// ---------------------------------------------------------------------------
// Supported-subset check

fn check_supported(src: &SourceIndex<'_>, func: &StmtFunctionDef) -> Result<(), InstrumentError> {
    for stmt in &func.body {
        check_stmt(src, stmt)?;
    }
    let mut finder = SuspendFinder::default();
    for stmt in func.body.iter().cloned() {
        finder.visit_stmt(stmt);
    }
    if let Some(offset) = finder.found {
        return Err(InstrumentError::UnsupportedConstruct {
            line: src.line_of(offset),
            what: "yield/await in entry function".into(),
        });
    }
    Ok(())
}

fn check_stmt(src: &SourceIndex<'_>, stmt: &Stmt) -> Result<(), InstrumentError> {
    let unsupported = |what: &str| {
        Err(InstrumentError::UnsupportedConstruct {
            line: src.first_line(stmt),
            what: what.to_string(),
        })
    };
    match stmt {
        Stmt::Try(_) | Stmt::TryStar(_) => unsupported("try/except"),
        Stmt::AsyncFor(_) | Stmt::AsyncWith(_) | Stmt::AsyncFunctionDef(_) => unsupported("async"),
        Stmt::Match(_) => unsupported("match statement"),
        Stmt::FunctionDef(f) if contains_return(&f.body) => {
            unsupported("nested function definition with return")
        }
        Stmt::ClassDef(c) if contains_return(&c.body) => {
            unsupported("nested function definition with return")
        }
        Stmt::For(s) => check_all(src, s.body.iter().chain(&s.orelse)),
        Stmt::While(s) => check_all(src, s.body.iter().chain(&s.orelse)),
        Stmt::If(s) => check_all(src, s.body.iter().chain(&s.orelse)),
        Stmt::With(s) => check_all(src, s.body.iter()),
        _ => Ok(()),
    }
}

fn check_all<'a>(
    src: &SourceIndex<'_>,
    stmts: impl Iterator<Item = &'a Stmt>,
) -> Result<(), InstrumentError> {
    for stmt in stmts {
        check_stmt(src, stmt)?;
    }
    Ok(())
}

fn contains_return(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|stmt| match stmt {
        Stmt::Return(_) => true,
        Stmt::FunctionDef(f) => contains_return(&f.body),
        Stmt::AsyncFunctionDef(f) => contains_return(&f.body),
        Stmt::ClassDef(c) => contains_return(&c.body),
        Stmt::For(s) => contains_return(&s.body) || contains_return(&s.orelse),
        Stmt::While(s) => contains_return(&s.body) || contains_return(&s.orelse),
        Stmt::If(s) => contains_return(&s.body) || contains_return(&s.orelse),
        Stmt::With(s) => contains_return(&s.body),
        Stmt::Try(s) => {
            contains_return(&s.body)
                || contains_return(&s.orelse)
                || contains_return(&s.finalbody)
        }
        _ => false,
    })
}

#[derive(Default)]
struct SuspendFinder {
    found: Option<usize>,
}

impl Visitor for SuspendFinder {
    fn visit_expr_yield(&mut self, node: ast::ExprYield) {
        self.found.get_or_insert(node.range.start().to_usize());
    }

    fn visit_expr_yield_from(&mut self, node: ast::ExprYieldFrom) {
        self.found.get_or_insert(node.range.start().to_usize());
    }

    fn visit_expr_await(&mut self, node: ast::ExprAwait) {
        self.found.get_or_insert(node.range.start().to_usize());
    }
}

// ---------------------------------------------------------------------------
// Planning

#[derive(Debug)]
enum Edit {
    /// A line inserted before (`before = true`) or after an original line.
    Insert {
        line: usize,
        before: bool,
        text: String,
        anchor: Option<(String, AnchorKind)>,
    },
    /// `return <expr>` spanning `first..=last` rewritten through `return_val`.
    Unroll {
        first: usize,
        last: usize,
        lines: Vec<String>,
        anchor_index: usize,
    },
}

impl Edit {
    fn anchor(&self) -> Option<(&str, AnchorKind)> {
        match self {
            Edit::Insert { anchor, .. } => anchor.as_ref().map(|(n, k)| (n.as_str(), *k)),
            Edit::Unroll { .. } => Some((RETURN_LABEL, AnchorKind::ReturnVal)),
        }
    }
}

struct Planner<'s> {
    src: &'s SourceIndex<'s>,
    unroll: bool,
    edits: Vec<Edit>,
}

impl Planner<'_> {
    fn block(&mut self, stmts: &[Stmt], bound: &mut BTreeSet<String>) -> Result<(), InstrumentError> {
        for (idx, stmt) in stmts.iter().enumerate() {
            match stmt {
                Stmt::Assign(_) | Stmt::AugAssign(_) | Stmt::AnnAssign(_) => {
                    if let Some(name) = simple_assignment_target(stmt) {
                        bound.insert(name.to_string());
                        if returned_name(stmts.get(idx + 1)) != Some(name) {
                            self.anchor_after(stmt, name, AnchorKind::Assignment);
                        }
                    } else if let Stmt::Assign(s) = stmt {
                        let mut names = Vec::new();
                        s.targets.iter().for_each(|t| bind_target_names(t, &mut names));
                        bound.extend(names);
                    }
                }
                Stmt::Return(ret) => {
                    if let Some(value) = &ret.value {
                        self.plan_return(stmt, value)?;
                    }
                }
                Stmt::For(_) | Stmt::While(_) => self.plan_loop(stmt, bound),
                Stmt::If(s) => {
                    let mut then_bound = bound.clone();
                    self.block(&s.body, &mut then_bound)?;
                    let mut else_bound = bound.clone();
                    self.block(&s.orelse, &mut else_bound)?;
                    *bound = match (terminates(&s.body), terminates(&s.orelse)) {
                        (true, false) => else_bound,
                        (false, true) => then_bound,
                        (true, true) => then_bound.union(&else_bound).cloned().collect(),
                        (false, false) => then_bound.intersection(&else_bound).cloned().collect(),
                    };
                }
                Stmt::With(s) => {
                    let mut names = Vec::new();
                    for item in &s.items {
                        if let Some(vars) = &item.optional_vars {
                            bind_target_names(vars, &mut names);
                        }
                    }
                    bound.extend(names);
                    self.block(&s.body, bound)?;
                }
                Stmt::FunctionDef(f) => {
                    bound.insert(f.name.to_string());
                }
                Stmt::ClassDef(c) => {
                    bound.insert(c.name.to_string());
                }
                Stmt::Import(s) => {
                    for alias in &s.names {
                        let name = alias.asname.as_ref().unwrap_or(&alias.name);
                        let head = name.as_str().split('.').next().unwrap_or_default();
                        bound.insert(head.to_string());
                    }
                }
                Stmt::ImportFrom(s) => {
                    for alias in &s.names {
                        bound.insert(alias.asname.as_ref().unwrap_or(&alias.name).to_string());
                    }
                }
                Stmt::Delete(s) => {
                    let mut names = Vec::new();
                    s.targets.iter().for_each(|t| bind_target_names(t, &mut names));
                    for name in names {
                        bound.remove(&name);
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn anchor_after(&mut self, stmt: &Stmt, name: &str, kind: AnchorKind) {
        let indent = self.src.indent(self.src.first_line(stmt));
        self.edits.push(Edit::Insert {
            line: self.src.last_line(stmt),
            before: false,
            text: format!("{indent}{}", anchor_statement(name, name)),
            anchor: Some((name.to_string(), kind)),
        });
    }

    fn plan_return(&mut self, stmt: &Stmt, value: &Expr) -> Result<(), InstrumentError> {
        let first = self.src.first_line(stmt);
        let indent = self.src.indent(first);
        if let Expr::Name(n) = value {
            self.edits.push(Edit::Insert {
                line: first,
                before: true,
                text: format!("{indent}{}", anchor_statement(RETURN_LABEL, n.id.as_str())),
                anchor: Some((RETURN_LABEL.to_string(), AnchorKind::ReturnVal)),
            });
            return Ok(());
        }
        if !self.unroll {
            return Err(InstrumentError::UnsupportedConstruct {
                line: first,
                what: "return expression needs unrolling (disabled)".into(),
            });
        }
        let last = self.src.last_line(stmt);
        let expr_text = self
            .src
            .slice(stmt)
            .strip_prefix("return")
            .ok_or_else(|| InstrumentError::Internal("return statement text".into()))?
            .trim_start();
        let mut lines: Vec<String> = format!("{indent}{RETURN_LABEL} = {expr_text}")
            .split('\n')
            .map(str::to_string)
            .collect();
        let tail = self.src.text()[self.src.stmt_end(stmt)..self.src.line_end(last)].trim();
        if !tail.is_empty() {
            if let Some(line) = lines.last_mut() {
                line.push_str("  ");
                line.push_str(tail);
            }
        }
        let anchor_index = lines.len();
        lines.push(format!("{indent}{}", anchor_statement(RETURN_LABEL, RETURN_LABEL)));
        lines.push(format!("{indent}return {RETURN_LABEL}"));
        self.edits.push(Edit::Unroll {
            first,
            last,
            lines,
            anchor_index,
        });
        Ok(())
    }

    fn plan_loop(&mut self, stmt: &Stmt, bound: &BTreeSet<String>) {
        let (body, orelse) = match stmt {
            Stmt::For(s) => (&s.body, &s.orelse),
            Stmt::While(s) => (&s.body, &s.orelse),
            _ => return,
        };
        let mut assigned = Vec::new();
        let mut deleted = BTreeSet::new();
        collect_loop_assignments(body, &mut assigned, &mut deleted);
        collect_loop_assignments(orelse, &mut assigned, &mut deleted);
        let mut seen = BTreeSet::new();
        for name in assigned {
            if bound.contains(&name) && !deleted.contains(&name) && seen.insert(name.clone()) {
                self.anchor_after(stmt, &name, AnchorKind::PostLoop);
            }
        }
    }
}

fn collect_loop_assignments(stmts: &[Stmt], out: &mut Vec<String>, deleted: &mut BTreeSet<String>) {
    for stmt in stmts {
        match stmt {
            Stmt::Assign(s) => s.targets.iter().for_each(|t| bind_target_names(t, out)),
            Stmt::AugAssign(s) => bind_target_names(&s.target, out),
            Stmt::AnnAssign(s) if s.value.is_some() => bind_target_names(&s.target, out),
            Stmt::For(s) => {
                collect_loop_assignments(&s.body, out, deleted);
                collect_loop_assignments(&s.orelse, out, deleted);
            }
            Stmt::While(s) => {
                collect_loop_assignments(&s.body, out, deleted);
                collect_loop_assignments(&s.orelse, out, deleted);
            }
            Stmt::If(s) => {
                collect_loop_assignments(&s.body, out, deleted);
                collect_loop_assignments(&s.orelse, out, deleted);
            }
            Stmt::With(s) => collect_loop_assignments(&s.body, out, deleted),
            Stmt::Delete(s) => {
                let mut names = Vec::new();
                s.targets.iter().for_each(|t| bind_target_names(t, &mut names));
                deleted.extend(names);
            }
            _ => {}
        }
    }
}

fn apply_dropout(edits: &mut Vec<Edit>, config: &InstrumentationConfig) {
    if config.dropout_rate <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    edits.retain(|edit| match edit.anchor() {
        Some((_, AnchorKind::ReturnVal)) | None => true,
        Some(_) => rng.gen::<f64>() >= config.dropout_rate,
    });
}

struct Assembled {
    text: String,
    anchors: Vec<AnchorDecl>,
    map: LineMap,
}

fn assemble(src: &SourceIndex<'_>, edits: &[Edit]) -> Result<Assembled, InstrumentError> {
    let mut before: BTreeMap<usize, Vec<&Edit>> = BTreeMap::new();
    let mut after: BTreeMap<usize, Vec<&Edit>> = BTreeMap::new();
    let mut unrolls: BTreeMap<usize, &Edit> = BTreeMap::new();
    for edit in edits {
        match edit {
            Edit::Insert { line, before: true, .. } => before.entry(*line).or_default().push(edit),
            Edit::Insert { line, .. } => after.entry(*line).or_default().push(edit),
            Edit::Unroll { first, .. } => {
                unrolls.insert(*first, edit);
            }
        }
    }

    let mut out: Vec<String> = Vec::new();
    let mut anchors = Vec::new();
    let mut pairs = Vec::with_capacity(src.line_count());
    let push_inserts = |out: &mut Vec<String>, anchors: &mut Vec<AnchorDecl>, list: Option<&Vec<&Edit>>| {
        for edit in list.into_iter().flatten() {
            if let Edit::Insert { text, anchor, .. } = edit {
                out.push(text.clone());
                if let Some((name, kind)) = anchor {
                    anchors.push(AnchorDecl {
                        name: name.clone(),
                        line: out.len(),
                        kind: *kind,
                    });
                }
            }
        }
    };

    let mut line = 1;
    while line <= src.line_count() {
        push_inserts(&mut out, &mut anchors, before.get(&line));
        let mut last = line;
        match unrolls.get(&line) {
            Some(Edit::Unroll {
                first,
                last: end,
                lines,
                anchor_index,
            }) => {
                let base = out.len();
                for orig in *first..=*end {
                    pairs.push((orig, base + (orig - first) + 1));
                }
                out.extend(lines.iter().cloned());
                anchors.push(AnchorDecl {
                    name: RETURN_LABEL.to_string(),
                    line: base + anchor_index + 1,
                    kind: AnchorKind::ReturnVal,
                });
                last = *end;
            }
            _ => {
                out.push(src.line(line).to_string());
                pairs.push((line, out.len()));
            }
        }
        push_inserts(&mut out, &mut anchors, after.get(&last));
        line = last + 1;
    }

    let map = LineMap::new(pairs).map_err(|e| InstrumentError::Internal(e.to_string()))?;
    Ok(Assembled {
        text: join_lines(&out, src.has_trailing_newline()),
        anchors,
        map,
    })
}

fn anchor_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[ \t]*print\(f'[A-Za-z_][A-Za-z0-9_]*: \{[A-Za-z_][A-Za-z0-9_]*\}'\)[ \t\r]*$")
            .expect("anchor pattern")
    })
}
