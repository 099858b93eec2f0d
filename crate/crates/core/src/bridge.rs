//! Client side of the external-model worker protocol.
//!
//! A worker is a child process speaking newline-delimited JSON on its standard
//! input and output. Each request is `{"id", "op", "payload"}`; each response
//! is `{"id", "ok": true, "payload"}` or `{"id", "ok": false, "error": {"code",
//! "message"}}`. Request ids start at 0 and strictly increase. The first
//! request of a session is always `handshake`.
//!
//! Every numeric payload coming back from a worker is validated here before
//! any caller sees it.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::data::FeatureKind;
use crate::models::PROB_SUM_TOLERANCE;

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

pub const CAP_REGRESSION_DENSITY: &str = "regression_density";
pub const CAP_CLASSIFICATION_PROBS: &str = "classification_probs";
pub const CAP_CONDITIONAL_QUANTILES: &str = "conditional_quantiles";
pub const CAP_CONDITIONAL_CLASS_PROBS: &str = "conditional_class_probs";

/// Keep at most this much worker stderr for diagnostics.
const STDERR_TAIL: usize = 4096;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to launch worker `{command}`: {source}")]
    Launch {
        command: String,
        source: std::io::Error,
    },

    #[error("worker exited or closed its output{}", stderr_suffix(.stderr))]
    Crashed { stderr: String },

    #[error("worker did not answer `{op}` within {secs:.1} s")]
    Timeout { op: String, secs: f64 },

    #[error("malformed worker response: {0}")]
    Malformed(String),

    #[error("worker error {code}: {message}")]
    Remote { code: String, message: String },

    #[error("protocol version mismatch: client {client}, worker {worker}")]
    Version { client: u64, worker: u64 },

    #[error("worker does not offer capability `{0}`")]
    Capability(String),

    #[error("worker response failed validation: {0}")]
    Validation(String),

    #[error("worker i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn stderr_suffix(stderr: &str) -> String {
    if stderr.trim().is_empty() {
        String::new()
    } else {
        format!("; stderr: {}", stderr.trim())
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    op: &'a str,
    payload: Value,
}

/// Splits a response line into its payload, checking id and status.
pub fn parse_response(line: &str, expected_id: u64) -> Result<Value, BridgeError> {
    let mut v: Value = serde_json::from_str(line)
        .map_err(|e| BridgeError::Malformed(format!("{e}: {}", truncate(line))))?;
    let id = v
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| BridgeError::Malformed(format!("missing id: {}", truncate(line))))?;
    if id != expected_id {
        return Err(BridgeError::Malformed(format!(
            "response id {id} does not match request id {expected_id}"
        )));
    }
    match v.get("ok").and_then(Value::as_bool) {
        Some(true) => Ok(v.get_mut("payload").map(Value::take).unwrap_or(Value::Null)),
        Some(false) => {
            let err = v.get("error");
            let field = |k: &str| {
                err.and_then(|e| e.get(k))
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string()
            };
            Err(BridgeError::Remote {
                code: field("code"),
                message: field("message"),
            })
        }
        None => Err(BridgeError::Malformed(format!(
            "missing ok flag: {}",
            truncate(line)
        ))),
    }
}

fn truncate(s: &str) -> String {
    if s.len() <= 200 {
        s.to_string()
    } else {
        let mut end = 200;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

fn number_vec(v: &Value, what: &str) -> Result<Vec<f64>, BridgeError> {
    v.as_array()
        .ok_or_else(|| BridgeError::Malformed(format!("`{what}` is not an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| BridgeError::Malformed(format!("`{what}` holds a non-number {x}")))
        })
        .collect()
}

fn number_matrix(v: &Value, what: &str) -> Result<Vec<Vec<f64>>, BridgeError> {
    v.as_array()
        .ok_or_else(|| BridgeError::Malformed(format!("`{what}` is not an array")))?
        .iter()
        .map(|row| number_vec(row, what))
        .collect()
}

pub fn validate_log_densities(values: &[f64], rows: usize) -> Result<(), BridgeError> {
    if values.len() != rows {
        return Err(BridgeError::Validation(format!(
            "{} log densities for {rows} rows",
            values.len()
        )));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(BridgeError::Validation(format!("log density {v} at row {i}")));
    }
    Ok(())
}

/// Quantile rows must be finite, of the requested width, and nondecreasing.
pub fn validate_quantile_rows(rows: &[Vec<f64>], m: usize, k: usize) -> Result<(), BridgeError> {
    if rows.len() != m {
        return Err(BridgeError::Validation(format!(
            "{} quantile rows for {m} inputs",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(BridgeError::Validation(format!(
                "quantile row {i} has {} values, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::Validation(format!("non-finite quantile in row {i}")));
        }
        if let Some(w) = row.windows(2).position(|w| w[1] < w[0]) {
            return Err(BridgeError::Validation(format!(
                "quantiles in row {i} decrease at level {}",
                w + 1
            )));
        }
    }
    Ok(())
}

/// Probability rows must be finite, non-negative and sum to one within tolerance.
pub fn validate_prob_rows(rows: &[Vec<f64>], m: usize, levels: usize) -> Result<(), BridgeError> {
    if rows.len() != m {
        return Err(BridgeError::Validation(format!(
            "{} probability rows for {m} inputs",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != levels {
            return Err(BridgeError::Validation(format!(
                "probability row {i} has {} entries, expected {levels}",
                row.len()
            )));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(BridgeError::Validation(format!("invalid probability in row {i}")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(BridgeError::Validation(format!(
                "probabilities in row {i} sum to {total}"
            )));
        }
    }
    Ok(())
}

fn kind_fields(kind: FeatureKind) -> (&'static str, Option<usize>) {
    match kind {
        FeatureKind::Continuous => ("continuous", None),
        FeatureKind::Categorical { levels } => ("categorical", Some(levels)),
    }
}

/// A running worker session.
pub struct BridgeClient {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    next_id: u64,
    timeout: Duration,
    capabilities: Vec<String>,
    dead: bool,
}

impl BridgeClient {
    /// Launches `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<BridgeClient, BridgeError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| BridgeError::Launch {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr_pipe = child.stderr.take().expect("piped stderr");

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 1024];
            let mut pipe = stderr_pipe;
            while let Ok(n) = pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                if let Ok(mut s) = sink.lock() {
                    s.push_str(&String::from_utf8_lossy(&buf[..n]));
                    if s.len() > STDERR_TAIL {
                        let mut cut = s.len() - STDERR_TAIL;
                        while !s.is_char_boundary(cut) {
                            cut += 1;
                        }
                        s.drain(..cut);
                    }
                }
            }
        });

        let mut client = BridgeClient {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
            stderr,
            next_id: 0,
            timeout,
            capabilities: Vec::new(),
            dead: false,
        };
        client.handshake()?;
        Ok(client)
    }

    fn handshake(&mut self) -> Result<(), BridgeError> {
        let payload = self.call("handshake", json!({ "version": PROTOCOL_VERSION }))?;
        let worker = payload
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| BridgeError::Malformed("handshake without version".into()))?;
        if worker != PROTOCOL_VERSION {
            return Err(BridgeError::Version {
                client: PROTOCOL_VERSION,
                worker,
            });
        }
        self.capabilities = payload
            .get("capabilities")
            .and_then(Value::as_array)
            .map(|caps| {
                caps.iter()
                    .filter_map(|c| c.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default();
        Ok(())
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    pub fn require(&self, capability: &str) -> Result<(), BridgeError> {
        if self.capabilities.iter().any(|c| c == capability) {
            Ok(())
        } else {
            Err(BridgeError::Capability(capability.to_string()))
        }
    }

    fn crashed(&mut self) -> BridgeError {
        self.dead = true;
        let _ = self.child.kill();
        let stderr = self.stderr.lock().map(|s| s.clone()).unwrap_or_default();
        BridgeError::Crashed { stderr }
    }

    /// Sends one request and waits for its response payload.
    pub fn call(&mut self, op: &str, payload: Value) -> Result<Value, BridgeError> {
        if self.dead {
            return Err(self.crashed());
        }
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request { id, op, payload })
            .map_err(|e| BridgeError::Malformed(e.to_string()))?;
        line.push('\n');
        let sent = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::Error::from(std::io::ErrorKind::BrokenPipe)),
        };
        if sent.is_err() {
            return Err(self.crashed());
        }
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => parse_response(&line, id),
            Ok(Err(e)) => {
                self.dead = true;
                Err(BridgeError::Io(e))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.dead = true;
                let _ = self.child.kill();
                Err(BridgeError::Timeout {
                    op: op.to_string(),
                    secs: self.timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                // Give the stderr reader a moment to drain.
                let _ = self.child.wait();
                thread::sleep(Duration::from_millis(20));
                Err(self.crashed())
            }
        }
    }

    fn model_id(payload: &Value) -> Result<Value, BridgeError> {
        match payload.get("model_id") {
            Some(id @ (Value::String(_) | Value::Number(_))) => Ok(id.clone()),
            _ => Err(BridgeError::Malformed("fit response without model_id".into())),
        }
    }

    pub fn fit_y(
        &mut self,
        x: &[Vec<f64>],
        y: &[f64],
        y_kind: FeatureKind,
        seed: u64,
    ) -> Result<Value, BridgeError> {
        let (kind, levels) = kind_fields(y_kind);
        self.require(if y_kind.is_categorical() {
            CAP_CLASSIFICATION_PROBS
        } else {
            CAP_REGRESSION_DENSITY
        })?;
        let mut payload = json!({ "X": x, "y": y, "y_kind": kind, "seed": seed });
        if let Some(l) = levels {
            payload["levels"] = json!(l);
        }
        let resp = self.call("fit_y", payload)?;
        Self::model_id(&resp)
    }

    pub fn log_density(
        &mut self,
        model_id: &Value,
        x: &[Vec<f64>],
        y: &[f64],
    ) -> Result<Vec<f64>, BridgeError> {
        let resp = self.call(
            "log_density",
            json!({ "model_id": model_id, "X_eval": x, "y_eval": y }),
        )?;
        let values = number_vec(
            resp.get("log_density")
                .ok_or_else(|| BridgeError::Malformed("missing log_density".into()))?,
            "log_density",
        )?;
        validate_log_densities(&values, x.len())?;
        Ok(values)
    }

    pub fn fit_conditional(
        &mut self,
        x_minus_j: &[Vec<f64>],
        x_j: &[f64],
        kind: FeatureKind,
        seed: u64,
    ) -> Result<Value, BridgeError> {
        let (name, levels) = kind_fields(kind);
        self.require(if kind.is_categorical() {
            CAP_CONDITIONAL_CLASS_PROBS
        } else {
            CAP_CONDITIONAL_QUANTILES
        })?;
        let mut payload = json!({ "X_minus_j": x_minus_j, "x_j": x_j, "kind": name, "seed": seed });
        if let Some(l) = levels {
            payload["levels"] = json!(l);
        }
        let resp = self.call("fit_conditional", payload)?;
        Self::model_id(&resp)
    }

    pub fn quantiles(
        &mut self,
        model_id: &Value,
        x_minus_j: &[Vec<f64>],
        levels: &[f64],
    ) -> Result<Vec<Vec<f64>>, BridgeError> {
        let resp = self.call(
            "quantiles",
            json!({ "model_id": model_id, "X_minus_j_eval": x_minus_j, "levels": levels }),
        )?;
        let values = number_matrix(
            resp.get("values")
                .ok_or_else(|| BridgeError::Malformed("missing values".into()))?,
            "values",
        )?;
        validate_quantile_rows(&values, x_minus_j.len(), levels.len())?;
        Ok(values)
    }

    pub fn class_probs(
        &mut self,
        model_id: &Value,
        x_minus_j: &[Vec<f64>],
        levels: usize,
    ) -> Result<Vec<Vec<f64>>, BridgeError> {
        let resp = self.call(
            "class_probs",
            json!({ "model_id": model_id, "X_minus_j_eval": x_minus_j }),
        )?;
        let probs = number_matrix(
            resp.get("probs")
                .ok_or_else(|| BridgeError::Malformed("missing probs".into()))?,
            "probs",
        )?;
        validate_prob_rows(&probs, x_minus_j.len(), levels)?;
        Ok(probs)
    }
}

impl fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeClient")
            .field("command", &self.command)
            .field("next_id", &self.next_id)
            .field("capabilities", &self.capabilities)
            .field("dead", &self.dead)
            .finish_non_exhaustive()
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved worker exit on its own.
        self.stdin.take();
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            thread::sleep(Duration::from_millis(10));
            if !matches!(self.child.try_wait(), Ok(Some(_))) {
                let _ = self.child.kill();
            }
        }
        let _ = self.child.wait();
    }
}
