//! Newline-delimited JSON messages exchanged with a shim process.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

/// Sent verbatim to ask a shim to exit cleanly.
pub const SHUTDOWN_LINE: &str = r#"{"mode":"shutdown"}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShimMode {
    Run,
    SyntaxCheck,
    Canonicalize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimRequest {
    pub mode: ShimMode,
    pub source_text: String,
    pub entry_name: String,
    /// Source text of the argument tuple (or of the literal to canonicalize).
    pub input_literal: String,
    pub timeout_ms: u64,
}

impl ShimRequest {
    pub fn run(source_text: &str, entry_name: &str, input_literal: &str, timeout_ms: u64) -> Self {
        Self {
            mode: ShimMode::Run,
            source_text: source_text.to_string(),
            entry_name: entry_name.to_string(),
            input_literal: input_literal.to_string(),
            timeout_ms,
        }
    }

    pub fn syntax_check(source_text: &str, timeout_ms: u64) -> Self {
        Self {
            mode: ShimMode::SyntaxCheck,
            source_text: source_text.to_string(),
            entry_name: String::new(),
            input_literal: String::new(),
            timeout_ms,
        }
    }

    pub fn canonicalize(literal: &str, timeout_ms: u64) -> Self {
        Self {
            mode: ShimMode::Canonicalize,
            source_text: String::new(),
            entry_name: String::new(),
            input_literal: literal.to_string(),
            timeout_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShimStatus {
    Ok,
    Timeout,
    Exception,
    SyntaxError,
}

impl fmt::Display for ShimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShimStatus::Ok => "ok",
            ShimStatus::Timeout => "timeout",
            ShimStatus::Exception => "exception",
            ShimStatus::SyntaxError => "syntax_error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimResponse {
    pub status: ShimStatus,
    #[serde(default)]
    pub stdout_lines: Vec<String>,
    #[serde(default)]
    pub return_repr: Option<String>,
    #[serde(default)]
    pub error_text: Option<String>,
    #[serde(default)]
    pub duration_ms: f64,
}

impl ShimResponse {
    /// Response synthesised by the parent after killing an unresponsive shim.
    pub fn killed(timeout_ms: u64) -> Self {
        Self {
            status: ShimStatus::Timeout,
            stdout_lines: Vec::new(),
            return_repr: None,
            error_text: Some(format!("no response within {timeout_ms} ms; shim killed")),
            duration_ms: timeout_ms as f64,
        }
    }
}
