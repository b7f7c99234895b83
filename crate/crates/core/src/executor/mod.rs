//! Ground-truth execution through out-of-process shims, or replay of
//! previously recorded results.

mod fixture;
mod pool;
mod protocol;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use rustpython_parser::{ast, Parse};
use thiserror::Error;

pub use fixture::{source_digest, FixtureRecord, FixtureStore};
pub use pool::{ShimCommand, SHIM_ENV};
pub use protocol::{
    ShimMode, ShimRequest, ShimResponse, ShimStatus, DEFAULT_TIMEOUT_MS, SHUTDOWN_LINE,
};

use crate::literal;
use crate::model::{ExecutionTrace, InstrumentedProgram, JsonlError, SourceProgram};
use pool::ShimPool;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("execution failed ({status}): {message}")]
    ExecutionFailed { status: ShimStatus, message: String },
    #[error("stdout line {index} is not a `name: value` trace line: {line:?}")]
    TraceParseError { index: usize, line: String },
    #[error("no recorded result for {origin_id} on input {input}")]
    FixtureMissing { origin_id: String, input: String },
    #[error("cannot start shim `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("shim protocol error: {0}")]
    Protocol(String),
    #[error("fixture file {path}: {source}")]
    Fixture {
        path: String,
        #[source]
        source: JsonlError,
    },
    #[error("no shim found; set {SHIM_ENV} or supply a fixture file")]
    NoBackend,
    #[error("invalid executor config: {0}")]
    InvalidConfig(String),
    #[error("equivalence check needs at least one input")]
    NoInputs,
}

impl ExecError {
    /// Short machine-readable tag, used as a rejection reason.
    pub fn reason(&self) -> String {
        match self {
            ExecError::ExecutionFailed { status, .. } => format!("execution_failed:{status}"),
            ExecError::TraceParseError { .. } => "trace_parse_error".into(),
            ExecError::FixtureMissing { .. } => "fixture_missing".into(),
            ExecError::Spawn { .. } | ExecError::NoBackend => "shim_unavailable".into(),
            ExecError::Protocol(_) => "shim_protocol".into(),
            ExecError::Fixture { .. } => "fixture_file".into(),
            ExecError::InvalidConfig(_) => "invalid_config".into(),
            ExecError::NoInputs => "no_inputs".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub pool_size: usize,
    pub timeout_ms: u64,
    /// When set, results are replayed from this file and no shim is started.
    pub fixture_path: Option<PathBuf>,
    /// Defaults to [`ShimCommand::resolve`].
    pub shim: Option<ShimCommand>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            pool_size: 1,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            fixture_path: None,
            shim: None,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.pool_size == 0 {
            return Err(ExecError::InvalidConfig("pool_size must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ExecError::InvalidConfig("timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

/// Stdout and return value of a successful run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub stdout_lines: Vec<String>,
    pub return_repr: String,
}

enum Backend {
    Live(ShimPool),
    Replay(FixtureStore),
}

/// Literal equality as used for terminal rewards.
pub trait ValueEq {
    /// Canonical printed form, or `None` when `literal` is not a literal.
    fn canonical(&self, literal: &str) -> Option<String>;

    /// Canonical forms are compared when both sides have one. When only one
    /// side canonicalizes, the other (trimmed) must equal that canonical form
    /// or the string it denotes, so an unquoted `a|b` matches `'a|b'`.
    /// Otherwise trimmed text is compared.
    fn values_equal(&self, a: &str, b: &str) -> bool {
        let (a, b) = (a.trim(), b.trim());
        if a == b {
            return true;
        }
        let raw_matches = |canon: &str, raw: &str| {
            canon == raw || literal::str_contents(canon).is_some_and(|s| s == raw)
        };
        match (self.canonical(a), self.canonical(b)) {
            (Some(x), Some(y)) => x == y,
            (Some(x), None) => raw_matches(&x, b),
            (None, Some(y)) => raw_matches(&y, a),
            (None, None) => false,
        }
    }
}

/// Offline canonicalization with the in-crate literal printer.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralEquality;

impl ValueEq for LiteralEquality {
    fn canonical(&self, literal: &str) -> Option<String> {
        literal::canonicalize(literal).ok()
    }
}

pub struct Executor {
    backend: Backend,
    timeout_ms: u64,
    recorded: Option<Mutex<Vec<FixtureRecord>>>,
    canon_cache: Mutex<HashMap<String, Option<String>>>,
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Result<Self, ExecError> {
        config.validate()?;
        if let Some(path) = &config.fixture_path {
            let mut ex = Self::replay(FixtureStore::load(path)?);
            ex.timeout_ms = config.timeout_ms;
            return Ok(ex);
        }
        let shim = config.shim.or_else(ShimCommand::resolve).ok_or(ExecError::NoBackend)?;
        Ok(Self::live(shim, config.pool_size, config.timeout_ms))
    }

    pub fn live(shim: ShimCommand, pool_size: usize, timeout_ms: u64) -> Self {
        Self::with_backend(Backend::Live(ShimPool::new(shim, pool_size)), timeout_ms)
    }

    pub fn replay(store: FixtureStore) -> Self {
        Self::with_backend(Backend::Replay(store), DEFAULT_TIMEOUT_MS)
    }

    fn with_backend(backend: Backend, timeout_ms: u64) -> Self {
        Self {
            backend,
            timeout_ms,
            recorded: None,
            canon_cache: Mutex::new(HashMap::new()),
        }
    }

    /// Keep a fixture record of every live run.
    pub fn recording(mut self) -> Self {
        self.recorded = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn take_recorded(&self) -> FixtureStore {
        let records = self
            .recorded
            .as_ref()
            .map(|m| std::mem::take(&mut *m.lock().expect("recorder lock")))
            .unwrap_or_default();
        FixtureStore::new(records)
    }

    pub fn is_live(&self) -> bool {
        matches!(self.backend, Backend::Live(_))
    }

    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms
    }

    fn execute(
        &self,
        origin_id: &str,
        source: &str,
        entry: &str,
        input: &str,
    ) -> Result<ShimResponse, ExecError> {
        match &self.backend {
            Backend::Live(pool) => {
                let resp = pool.call(&ShimRequest::run(source, entry, input, self.timeout_ms))?;
                if let Some(rec) = &self.recorded {
                    let record = FixtureRecord::from_response(origin_id, source, input, &resp);
                    rec.lock().expect("recorder lock").push(record);
                }
                Ok(resp)
            }
            Backend::Replay(store) => store
                .lookup(origin_id, source, input)
                .map(FixtureRecord::to_response)
                .ok_or_else(|| ExecError::FixtureMissing {
                    origin_id: origin_id.to_string(),
                    input: input.trim().to_string(),
                }),
        }
    }

    /// Runs `entry` on the argument tuple `input`.
    pub fn run(
        &self,
        origin_id: &str,
        source: &str,
        entry: &str,
        input: &str,
    ) -> Result<RunOutput, ExecError> {
        let resp = self.execute(origin_id, source, entry, input)?;
        match (resp.status, resp.return_repr) {
            (ShimStatus::Ok, Some(return_repr)) => Ok(RunOutput {
                stdout_lines: resp.stdout_lines,
                return_repr,
            }),
            (ShimStatus::Ok, None) => Err(ExecError::Protocol("ok response without return_repr".into())),
            (status, _) => Err(ExecError::ExecutionFailed {
                status,
                message: resp.error_text.unwrap_or_default(),
            }),
        }
    }

    pub fn generate_trace(
        &self,
        program: &InstrumentedProgram,
        input: &str,
    ) -> Result<ExecutionTrace, ExecError> {
        let out = self.run(
            &program.origin_id,
            &program.source_text,
            &program.entry_name,
            input,
        )?;
        parse_trace(&out.stdout_lines, out.return_repr)
    }

    /// True iff both programs return the same value on every input.
    pub fn check_equivalence(
        &self,
        original: &SourceProgram,
        instrumented: &InstrumentedProgram,
        inputs: &[String],
    ) -> Result<bool, ExecError> {
        if inputs.is_empty() {
            return Err(ExecError::NoInputs);
        }
        for input in inputs {
            let a = self.run(&original.id, &original.source_text, &original.entry_name, input)?;
            let b = self.run(
                &instrumented.origin_id,
                &instrumented.source_text,
                &instrumented.entry_name,
                input,
            )?;
            if a.return_repr != b.return_repr {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Compile-only check. Replay mode parses in-process.
    pub fn syntax_check(&self, source: &str) -> Result<(), ExecError> {
        match &self.backend {
            Backend::Live(pool) => {
                let resp = pool.call(&ShimRequest::syntax_check(source, self.timeout_ms))?;
                match resp.status {
                    ShimStatus::Ok => Ok(()),
                    status => Err(ExecError::ExecutionFailed {
                        status,
                        message: resp.error_text.unwrap_or_default(),
                    }),
                }
            }
            Backend::Replay(_) => ast::Suite::parse(source, "<program>")
                .map(|_| ())
                .map_err(|e| ExecError::ExecutionFailed {
                    status: ShimStatus::SyntaxError,
                    message: e.to_string(),
                }),
        }
    }

    fn canonicalize_uncached(&self, text: &str) -> Option<String> {
        match &self.backend {
            Backend::Live(pool) => {
                match pool.call(&ShimRequest::canonicalize(text, self.timeout_ms)) {
                    Ok(resp) if resp.status == ShimStatus::Ok => resp.return_repr,
                    Ok(_) => None,
                    Err(e) => {
                        tracing::warn!(error = %e, "canonicalize failed; using string comparison");
                        None
                    }
                }
            }
            Backend::Replay(_) => literal::canonicalize(text).ok(),
        }
    }
}

impl ValueEq for Executor {
    fn canonical(&self, text: &str) -> Option<String> {
        let text = text.trim();
        if let Some(hit) = self.canon_cache.lock().expect("cache lock").get(text) {
            return hit.clone();
        }
        let value = self.canonicalize_uncached(text);
        self.canon_cache
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), value.clone());
        value
    }
}

fn trace_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*): (.*)$").expect("valid regex"))
}

pub(crate) fn split_trace_line(line: &str) -> Option<(String, String)> {
    let caps = trace_line_regex().captures(line)?;
    Some((caps[1].to_string(), caps[2].to_string()))
}

/// Every stdout line must be a `name: value` anchor line.
pub fn parse_trace(stdout_lines: &[String], final_value: String) -> Result<ExecutionTrace, ExecError> {
    let events = stdout_lines
        .iter()
        .enumerate()
        .map(|(index, line)| {
            split_trace_line(line).ok_or_else(|| ExecError::TraceParseError {
                index,
                line: line.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ExecutionTrace { events, final_value })
}
