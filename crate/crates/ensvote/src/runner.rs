//! Client side of the runner protocol.
//!
//! A runner is an external executable speaking UTF-8 line-delimited JSON
//! over stdin/stdout. Each request carries an integer `id` that the response
//! echoes:
//!
//! | request | success response |
//! |---|---|
//! | `{"id", "op": "ping"}` | `{"id", "ok": true}` |
//! | `{"id", "op": "load", "source"}` | `{"id", "ok": true}` or `{"id", "ok": false, "error"}` |
//! | `{"id", "op": "call", "entry_point", "args"}` | `{"id", "status": "ok", "value"}` or `{"id", "status": "exception", "error_kind"}` |
//! | `{"id", "op": "run_tests", "tests", "entry_point"}` | `{"id", "passed", "failures"}` |
//!
//! Malformed requests get `{"id", "status": "protocol_error", "error"}`.
//! Wall-clock timeouts are enforced here: the process is killed, respawned
//! and the last loaded source is loaded again.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use ensvote_core::{CallExecutor, ExecOutcome};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable consulted when no runner is configured.
pub const RUNNER_ENV: &str = "ENSVOTE_RUNNER";

const LOAD_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("failed to start runner `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("runner exited or closed its output")]
    Crashed,
    #[error("runner protocol violation: {0}")]
    Protocol(String),
    #[error("runner did not answer `{0}` in time")]
    Unresponsive(&'static str),
    #[error("runner i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How to launch a runner: the executable and any fixed arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl RunnerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        RunnerCommand { program: program.into(), args: Vec::new() }
    }

    /// Splits a command line on whitespace (`python3 runner.py`).
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let program = parts.next()?;
        Some(RunnerCommand { program: program.into(), args: parts.map(str::to_string).collect() })
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(RUNNER_ENV).ok().and_then(|v| Self::parse(&v))
    }

    fn display(&self) -> String {
        let mut s = self.program.display().to_string();
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s
    }
}

/// Verdict of a reference-test run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub passed: bool,
    pub failures: u32,
    #[serde(default)]
    pub timed_out: bool,
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Process {
    fn spawn(command: &RunnerCommand) -> Result<Self, RunnerError> {
        let mut child = Command::new(&command.program)
            .args(&command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| RunnerError::Spawn { command: command.display(), source })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Process { child, stdin, lines: rx })
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One runner process holding at most one loaded program.
pub struct RunnerSession {
    command: RunnerCommand,
    process: Process,
    next_id: u64,
    loaded: Option<String>,
}

impl RunnerSession {
    pub fn spawn(command: &RunnerCommand) -> Result<Self, RunnerError> {
        Ok(RunnerSession { command: command.clone(), process: Process::spawn(command)?, next_id: 0, loaded: None })
    }

    fn respawn(&mut self) -> Result<(), RunnerError> {
        self.process.kill();
        self.process = Process::spawn(&self.command)?;
        if let Some(source) = self.loaded.clone() {
            let _ = self.load(&source)?;
        }
        Ok(())
    }

    /// Sends one request; `Ok(None)` means no answer within `timeout`.
    fn request(&mut self, mut body: Value, timeout: Duration) -> Result<Option<Value>, RunnerError> {
        self.next_id += 1;
        let id = self.next_id;
        body["id"] = json!(id);
        let mut line = serde_json::to_string(&body).expect("request serializes");
        line.push('\n');
        if self.process.stdin.write_all(line.as_bytes()).and_then(|_| self.process.stdin.flush()).is_err() {
            return Err(RunnerError::Crashed);
        }
        loop {
            match self.process.lines.recv_timeout(timeout) {
                Ok(Ok(text)) => {
                    let Ok(response) = serde_json::from_str::<Value>(&text) else {
                        log::debug!("ignoring non-protocol runner output: {text}");
                        continue;
                    };
                    match response.get("id").and_then(Value::as_u64) {
                        Some(got) if got == id => return Ok(Some(response)),
                        Some(got) if got < id => continue,
                        _ => return Err(RunnerError::Protocol(format!("expected id {id}, got {response}"))),
                    }
                }
                Ok(Err(e)) => return Err(RunnerError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(RunnerError::Crashed),
            }
        }
    }

    pub fn ping(&mut self) -> Result<(), RunnerError> {
        match self.request(json!({"op": "ping"}), LOAD_TIMEOUT)? {
            Some(r) if r.get("ok") == Some(&json!(true)) => Ok(()),
            Some(r) => Err(RunnerError::Protocol(format!("bad ping response {r}"))),
            None => Err(RunnerError::Unresponsive("ping")),
        }
    }

    /// Loads `source`. The inner error is the candidate's own failure
    /// (compile error, module-level exception, disallowed import).
    pub fn load(&mut self, source: &str) -> Result<Result<(), String>, RunnerError> {
        self.loaded = Some(source.to_string());
        let response = self
            .request(json!({"op": "load", "source": source}), LOAD_TIMEOUT)?
            .ok_or(RunnerError::Unresponsive("load"))?;
        match response.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(Ok(())),
            Some(false) => {
                self.loaded = None;
                Ok(Err(response.get("error").and_then(Value::as_str).unwrap_or("load failed").to_string()))
            }
            None => Err(RunnerError::Protocol(format!("bad load response {response}"))),
        }
    }

    /// Calls `entry_point(*args)` in the loaded program.
    pub fn call(&mut self, entry_point: &str, args: &[Value], timeout: Duration) -> Result<ExecOutcome, RunnerError> {
        let body = json!({"op": "call", "entry_point": entry_point, "args": args});
        match self.request(body, timeout)? {
            None => {
                self.respawn()?;
                Ok(ExecOutcome::Timeout)
            }
            Some(mut response) => {
                if response.get("status").and_then(Value::as_str) == Some("protocol_error") {
                    return Err(RunnerError::Protocol(response["error"].to_string()));
                }
                if let Some(obj) = response.as_object_mut() {
                    obj.remove("id");
                }
                serde_json::from_value(response.clone())
                    .map_err(|e| RunnerError::Protocol(format!("bad call response {response}: {e}")))
            }
        }
    }

    /// Runs a HumanEval-style test program against the loaded candidate.
    pub fn run_tests(&mut self, tests: &str, entry_point: &str, timeout: Duration) -> Result<TestVerdict, RunnerError> {
        let body = json!({"op": "run_tests", "tests": tests, "entry_point": entry_point});
        match self.request(body, timeout)? {
            None => {
                self.respawn()?;
                Ok(TestVerdict { passed: false, failures: 1, timed_out: true })
            }
            Some(response) => {
                if response.get("status").and_then(Value::as_str) == Some("protocol_error") {
                    return Err(RunnerError::Protocol(response["error"].to_string()));
                }
                let passed = response.get("passed").and_then(Value::as_bool);
                let failures = response.get("failures").and_then(Value::as_u64);
                match (passed, failures) {
                    (Some(passed), Some(failures)) => {
                        Ok(TestVerdict { passed, failures: failures as u32, timed_out: false })
                    }
                    _ => Err(RunnerError::Protocol(format!("bad run_tests response {response}"))),
                }
            }
        }
    }

    /// Sends a raw line, for exercising the runner's malformed-input handling.
    pub fn send_raw(&mut self, line: &str, timeout: Duration) -> Result<Option<Value>, RunnerError> {
        writeln!(self.process.stdin, "{line}").map_err(|_| RunnerError::Crashed)?;
        self.process.stdin.flush().map_err(|_| RunnerError::Crashed)?;
        match self.process.lines.recv_timeout(timeout) {
            Ok(Ok(text)) => serde_json::from_str(&text).map(Some).map_err(|e| RunnerError::Protocol(e.to_string())),
            Ok(Err(e)) => Err(RunnerError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(RunnerError::Crashed),
        }
    }
}

impl Drop for RunnerSession {
    fn drop(&mut self) {
        self.process.kill();
    }
}

/// A loaded candidate bound to its entry point. A candidate that failed to
/// load answers every call with an exception outcome.
pub struct CandidateExecutor {
    session: RunnerSession,
    entry_point: String,
    timeout: Duration,
    load_error: Option<String>,
}

impl CandidateExecutor {
    pub fn start(
        command: &RunnerCommand,
        source: &str,
        entry_point: &str,
        timeout: Duration,
    ) -> Result<Self, RunnerError> {
        let mut session = RunnerSession::spawn(command)?;
        let load_error = session.load(source)?.err();
        if let Some(e) = &load_error {
            log::debug!("candidate failed to load: {e}");
        }
        Ok(CandidateExecutor { session, entry_point: entry_point.to_string(), timeout, load_error })
    }
}

impl CallExecutor for CandidateExecutor {
    type Error = RunnerError;

    fn call(&mut self, args: &[Value]) -> Result<ExecOutcome, RunnerError> {
        if self.load_error.is_some() {
            return Ok(ExecOutcome::Exception { error_kind: "LoadError".to_string() });
        }
        self.session.call(&self.entry_point, args, self.timeout)
    }
}
