//! Runs generated heuristic programs out of process.
//!
//! A [`PythonSession`] hosts one program in a fresh interpreter subprocess
//! and talks to it over newline-delimited JSON. The program is statically
//! scanned and then executed under restricted builtins, a guarded import,
//! an address-space limit and a zero file-size limit. Every call has a wall
//! clock limit; the whole session has a total budget. [`NativeSession`] wraps
//! a Rust closure behind the same interface for baselines and tests.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const HARNESS: &str = include_str!("../python/harness.py");

pub const DEFAULT_ALLOWED_IMPORTS: [&str; 14] = [
    "math", "random", "numpy", "itertools", "functools", "heapq", "collections", "statistics", "bisect", "copy",
    "operator", "typing", "dataclasses", "fractions",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxPolicy {
    pub python: String,
    pub time_limit_secs: f64,
    pub memory_limit_bytes: u64,
    pub total_budget_secs: f64,
    pub allowed_imports: Vec<String>,
    /// Reject programs whose syntax tree uses denied names, attributes or
    /// imports before running them. The runtime guards apply regardless.
    pub static_scan: bool,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        SandboxPolicy {
            python: "python3".into(),
            time_limit_secs: 5.0,
            memory_limit_bytes: 512 << 20,
            total_budget_secs: 60.0,
            allowed_imports: DEFAULT_ALLOWED_IMPORTS.iter().map(|s| s.to_string()).collect(),
            static_scan: true,
        }
    }
}

impl SandboxPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.time_limit_secs > 0.0 && self.total_budget_secs > 0.0) {
            return Err("sandbox time limits must be positive".into());
        }
        if self.memory_limit_bytes == 0 {
            return Err("sandbox memory limit must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Syntax,
    Runtime,
    Timeout,
    Protocol,
    BadShape,
}

impl ErrorKind {
    fn parse(s: &str) -> ErrorKind {
        match s {
            "syntax" => ErrorKind::Syntax,
            "runtime" => ErrorKind::Runtime,
            "timeout" => ErrorKind::Timeout,
            "bad_shape" => ErrorKind::BadShape,
            _ => ErrorKind::Protocol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?}: {detail}")]
pub struct ExecError {
    pub kind: ErrorKind,
    pub detail: String,
}

impl ExecError {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        ExecError { kind, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub call_id: u64,
    pub outcome: Result<Value, ExecError>,
    pub wall_time: Duration,
}

impl ExecResult {
    pub fn ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

/// Expected shape of a call result.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Number,
    Integer,
    Vector(usize),
    Matrix(usize, usize),
    IntList,
    Tuple(Vec<Shape>),
    Any,
}

fn finite(v: &Value) -> Option<f64> {
    v.as_f64().filter(|x| x.is_finite())
}

fn integral(v: &Value) -> bool {
    v.is_i64() || v.is_u64() || finite(v).is_some_and(|x| x.fract() == 0.0)
}

impl Shape {
    pub fn check(&self, v: &Value) -> Result<(), String> {
        match self {
            Shape::Any => Ok(()),
            Shape::Number => finite(v).map(|_| ()).ok_or_else(|| format!("expected a number, got {}", brief(v))),
            Shape::Integer => {
                if integral(v) {
                    Ok(())
                } else {
                    Err(format!("expected an integer, got {}", brief(v)))
                }
            }
            Shape::Vector(n) => {
                let a = v.as_array().ok_or_else(|| format!("expected a list, got {}", brief(v)))?;
                if a.len() != *n {
                    return Err(format!("expected {n} values, got {}", a.len()));
                }
                a.iter().try_for_each(|x| Shape::Number.check(x))
            }
            Shape::Matrix(r, c) => {
                let rows = v.as_array().ok_or_else(|| format!("expected a matrix, got {}", brief(v)))?;
                if rows.len() != *r {
                    return Err(format!("expected {r} rows, got {}", rows.len()));
                }
                rows.iter().try_for_each(|row| Shape::Vector(*c).check(row))
            }
            Shape::IntList => {
                let a = v.as_array().ok_or_else(|| format!("expected a list, got {}", brief(v)))?;
                a.iter().try_for_each(|x| Shape::Integer.check(x))
            }
            Shape::Tuple(parts) => {
                let a = v.as_array().ok_or_else(|| format!("expected a tuple, got {}", brief(v)))?;
                if a.len() != parts.len() {
                    return Err(format!("expected a {}-tuple, got {} items", parts.len(), a.len()));
                }
                parts.iter().zip(a).try_for_each(|(s, x)| s.check(x))
            }
        }
    }
}

fn brief(v: &Value) -> String {
    let s = v.to_string();
    if s.len() > 60 {
        format!("{}...", &s[..s.char_indices().nth(60).map_or(s.len(), |(i, _)| i)])
    } else {
        s
    }
}

pub fn value_f64s(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default()
}

pub fn value_matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().map(|rows| rows.iter().map(value_f64s).collect()).unwrap_or_default()
}

pub fn value_i64(v: &Value) -> Option<i64> {
    v.as_i64().or_else(|| v.as_f64().filter(|x| x.fract() == 0.0 && x.abs() < 9e15).map(|x| x as i64))
}

pub fn matrix_value(m: &[Vec<f64>]) -> Value {
    Value::from(m.iter().map(|r| Value::from(r.clone())).collect::<Vec<_>>())
}

/// A loaded heuristic that can be called repeatedly.
pub trait Session {
    fn invoke(&mut self, args: Vec<Value>, shape: &Shape) -> ExecResult;
    fn is_alive(&self) -> bool;
}

type NativeFn = Box<dyn FnMut(&[Value]) -> Result<Value, String> + Send>;

/// In-process session backed by trusted Rust code.
pub struct NativeSession {
    f: NativeFn,
    next_id: u64,
}

impl NativeSession {
    pub fn new(f: impl FnMut(&[Value]) -> Result<Value, String> + Send + 'static) -> Self {
        NativeSession { f: Box::new(f), next_id: 0 }
    }
}

impl Session for NativeSession {
    fn invoke(&mut self, args: Vec<Value>, shape: &Shape) -> ExecResult {
        let start = Instant::now();
        self.next_id += 1;
        let outcome = (self.f)(&args).map_err(|e| ExecError::new(ErrorKind::Runtime, e)).and_then(|v| {
            shape.check(&v).map(|_| v).map_err(|e| ExecError::new(ErrorKind::BadShape, e))
        });
        ExecResult { call_id: self.next_id, outcome, wall_time: start.elapsed() }
    }

    fn is_alive(&self) -> bool {
        true
    }
}

fn resolve_program(name: &str) -> PathBuf {
    if name.contains('/') {
        return PathBuf::from(name);
    }
    std::env::var_os("PATH")
        .into_iter()
        .flat_map(|p| std::env::split_paths(&p).collect::<Vec<_>>())
        .map(|dir| dir.join(name))
        .find(|p| p.is_file())
        .unwrap_or_else(|| PathBuf::from(name))
}

pub struct PythonSession {
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    policy: SandboxPolicy,
    function_name: String,
    next_id: u64,
    spent: Duration,
    _workdir: tempfile::TempDir,
}

impl std::fmt::Debug for PythonSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PythonSession").field("function", &self.function_name).field("alive", &self.child.is_some()).finish()
    }
}

impl PythonSession {
    /// Starts an interpreter, installs `code` and checks that
    /// `function_name` accepts `arity` positional arguments.
    pub fn load(code: &str, function_name: &str, arity: usize, policy: &SandboxPolicy) -> Result<Self, ExecError> {
        policy.validate().map_err(|e| ExecError::new(ErrorKind::Protocol, e))?;
        let workdir = tempfile::tempdir().map_err(|e| ExecError::new(ErrorKind::Protocol, format!("tempdir: {e}")))?;
        let mut child = Command::new(resolve_program(&policy.python))
            .args(["-I", "-B", "-u", "-c", HARNESS])
            .env_clear()
            .env("OPENBLAS_NUM_THREADS", "1")
            .env("OMP_NUM_THREADS", "1")
            .env("MKL_NUM_THREADS", "1")
            .current_dir(workdir.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ExecError::new(ErrorKind::Protocol, format!("cannot start {}: {e}", policy.python)))?;
        let stdout = child.stdout.take().expect("piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let mut session = PythonSession {
            child: Some(child),
            stdin,
            lines: rx,
            policy: policy.clone(),
            function_name: function_name.to_string(),
            next_id: 0,
            spent: Duration::ZERO,
            _workdir: workdir,
        };
        let hello = json!({
            "code": code,
            "fn": function_name,
            "arity": arity,
            "allowed": policy.allowed_imports,
            "memory_bytes": policy.memory_limit_bytes,
            "static_scan": policy.static_scan,
        });
        let start = Instant::now();
        let reply = session.exchange(&hello)?;
        session.spent += start.elapsed();
        if reply.get("ok").and_then(Value::as_bool) == Some(true) {
            Ok(session)
        } else {
            session.kill();
            Err(error_from_reply(&reply))
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }

    /// Sends one record and waits for one reply line.
    fn exchange(&mut self, msg: &Value) -> Result<Value, ExecError> {
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(ExecError::new(ErrorKind::Protocol, "session is closed"));
        };
        let mut line = msg.to_string();
        line.push('\n');
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            self.kill();
            return Err(ExecError::new(ErrorKind::Runtime, format!("interpreter exited: {e}")));
        }
        let remaining_budget = Duration::from_secs_f64(self.policy.total_budget_secs).saturating_sub(self.spent);
        let limit = Duration::from_secs_f64(self.policy.time_limit_secs).min(remaining_budget);
        match self.lines.recv_timeout(limit) {
            Ok(reply) => serde_json::from_str(&reply).map_err(|e| {
                self.kill();
                ExecError::new(ErrorKind::Protocol, format!("malformed reply: {e}"))
            }),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(ExecError::new(ErrorKind::Timeout, format!("no reply within {:.1}s", limit.as_secs_f64())))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill();
                Err(ExecError::new(ErrorKind::Runtime, "interpreter exited (possibly out of memory)"))
            }
        }
    }

    pub fn time_spent(&self) -> Duration {
        self.spent
    }
}

fn error_from_reply(reply: &Value) -> ExecError {
    let kind = reply.get("kind").and_then(Value::as_str).map_or(ErrorKind::Protocol, ErrorKind::parse);
    let detail = reply.get("detail").and_then(Value::as_str).unwrap_or("unknown error").to_string();
    ExecError::new(kind, detail)
}

impl Session for PythonSession {
    fn invoke(&mut self, args: Vec<Value>, shape: &Shape) -> ExecResult {
        self.next_id += 1;
        let call_id = self.next_id;
        let start = Instant::now();
        let outcome = if self.spent.as_secs_f64() >= self.policy.total_budget_secs {
            self.kill();
            Err(ExecError::new(ErrorKind::Timeout, "evaluation budget exhausted"))
        } else {
            let msg = json!({"call_id": call_id, "fn": self.function_name, "args": args});
            self.exchange(&msg).and_then(|reply| {
                if reply.get("call_id").and_then(Value::as_u64) != Some(call_id) {
                    self.kill();
                    return Err(ExecError::new(ErrorKind::Protocol, "reply does not match call id"));
                }
                if reply.get("ok").and_then(Value::as_bool) != Some(true) {
                    return Err(error_from_reply(&reply));
                }
                let result = reply.get("result").cloned().unwrap_or(Value::Null);
                shape.check(&result).map(|_| result).map_err(|e| ExecError::new(ErrorKind::BadShape, e))
            })
        };
        let wall_time = start.elapsed();
        self.spent += wall_time;
        ExecResult { call_id, outcome, wall_time }
    }

    fn is_alive(&self) -> bool {
        self.child.is_some()
    }
}

impl Drop for PythonSession {
    fn drop(&mut self) {
        self.kill();
    }
}
