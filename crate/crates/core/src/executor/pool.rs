use std::ffi::OsString;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{ShimRequest, ShimResponse, SHUTDOWN_LINE};
use super::ExecError;

/// Env var naming the shim executable (or a `.py` script run with `python3`).
pub const SHIM_ENV: &str = "TRACE_FORGE_SHIM";

/// Names probed next to the running binary when [`SHIM_ENV`] is unset.
const BUNDLED_NAMES: [&str; 2] = ["trace-forge-shim", "trace_forge_shim.py"];

/// Extra time the parent waits beyond the request timeout before killing.
const KILL_GRACE: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShimCommand {
    pub program: PathBuf,
    pub args: Vec<OsString>,
}

impl ShimCommand {
    /// Scripts ending in `.py` are launched through `python3`.
    pub fn for_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if path.extension().is_some_and(|e| e == "py") {
            Self {
                program: PathBuf::from("python3"),
                args: vec![path.into_os_string()],
            }
        } else {
            Self {
                program: path,
                args: Vec::new(),
            }
        }
    }

    /// `$TRACE_FORGE_SHIM`, else a shim bundled next to the current executable.
    pub fn resolve() -> Option<Self> {
        if let Some(path) = std::env::var_os(SHIM_ENV) {
            return Some(Self::for_path(path));
        }
        let exe = std::env::current_exe().ok()?;
        let dir = exe.parent()?;
        BUNDLED_NAMES
            .iter()
            .map(|name| dir.join(name))
            .find(|p| p.is_file())
            .map(Self::for_path)
    }

    fn describe(&self) -> String {
        let mut s = self.program.display().to_string();
        for a in &self.args {
            s.push(' ');
            s.push_str(&Path::new(a).display().to_string());
        }
        s
    }
}

#[derive(Debug)]
enum CallError {
    Timeout,
    Io(io::Error),
    Closed,
    Garbled(String),
}

struct ShimProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
}

impl ShimProcess {
    fn spawn(cmd: &ShimCommand) -> Result<Self, ExecError> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| ExecError::Spawn {
                program: cmd.describe(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn call(&mut self, req: &ShimRequest, wait: Duration) -> Result<ShimResponse, CallError> {
        let stdin = self.stdin.as_mut().ok_or(CallError::Closed)?;
        let mut line = serde_json::to_string(req).map_err(|e| CallError::Garbled(e.to_string()))?;
        line.push('\n');
        stdin.write_all(line.as_bytes()).map_err(CallError::Io)?;
        stdin.flush().map_err(CallError::Io)?;

        let deadline = Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(Ok(text)) if text.trim().is_empty() => continue,
                Ok(Ok(text)) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| CallError::Garbled(format!("{e}: {text:?}")))
                }
                Ok(Err(e)) => return Err(CallError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(CallError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(CallError::Closed),
            }
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ShimProcess {
    fn drop(&mut self) {
        if let Some(mut stdin) = self.stdin.take() {
            let _ = stdin.write_all(SHUTDOWN_LINE.as_bytes());
            let _ = stdin.write_all(b"\n");
            let _ = stdin.flush();
            drop(stdin);
            let until = Instant::now() + Duration::from_millis(500);
            while Instant::now() < until {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
        }
        self.kill();
    }
}

struct PoolState {
    idle: Vec<ShimProcess>,
    live: usize,
}

/// Up to `size` shim children, spawned lazily and reused across requests.
pub(crate) struct ShimPool {
    command: ShimCommand,
    size: usize,
    state: Mutex<PoolState>,
    freed: Condvar,
}

impl ShimPool {
    pub fn new(command: ShimCommand, size: usize) -> Self {
        Self {
            command,
            size: size.max(1),
            state: Mutex::new(PoolState {
                idle: Vec::new(),
                live: 0,
            }),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Result<ShimProcess, ExecError> {
        let mut state = self.state.lock().expect("pool lock");
        loop {
            if let Some(proc) = state.idle.pop() {
                return Ok(proc);
            }
            if state.live < self.size {
                state.live += 1;
                drop(state);
                return ShimProcess::spawn(&self.command).inspect_err(|_| self.release(None));
            }
            state = self.freed.wait(state).expect("pool lock");
        }
    }

    fn release(&self, proc: Option<ShimProcess>) {
        let mut state = self.state.lock().expect("pool lock");
        match proc {
            Some(p) => state.idle.push(p),
            None => state.live -= 1,
        }
        self.freed.notify_one();
    }

    /// Sends one request. A shim that misses its deadline is killed and the
    /// call reports a `timeout` status; the slot is refilled on next use.
    pub fn call(&self, req: &ShimRequest) -> Result<ShimResponse, ExecError> {
        let mut proc = self.acquire()?;
        let wait = Duration::from_millis(req.timeout_ms) + KILL_GRACE;
        match proc.call(req, wait) {
            Ok(resp) => {
                self.release(Some(proc));
                Ok(resp)
            }
            Err(err) => {
                proc.kill();
                self.release(None);
                match err {
                    CallError::Timeout => {
                        tracing::warn!(timeout_ms = req.timeout_ms, "shim unresponsive, killed");
                        Ok(ShimResponse::killed(req.timeout_ms))
                    }
                    CallError::Io(e) => Err(ExecError::Protocol(format!("shim i/o: {e}"))),
                    CallError::Closed => Err(ExecError::Protocol("shim exited unexpectedly".into())),
                    CallError::Garbled(msg) => Err(ExecError::Protocol(format!("bad response: {msg}"))),
                }
            }
        }
    }
}
