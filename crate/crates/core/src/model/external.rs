//! Newline-delimited JSON protocol for out-of-process models.
//!
//! ```text
//! model → {"classes": C}                       (once, on startup)
//! host  → {"id": 7, "points": [[x,y,z], ...]}
//! model → {"id": 7, "probs": [p_0, ..., p_{C-1}]}
//! ```
//!
//! Responses may arrive in any order; ids tie them to requests.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_probs, ModelOracle};
use crate::geometry::{Point, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Maximum wait for any single line from the model.
    pub timeout_ms: u64,
    /// Requests written before waiting for their responses.
    pub batch_size: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            batch_size: 64,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Handshake {
    classes: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    points: &'a [Point],
}

#[derive(Deserialize)]
struct IncomingRequest {
    id: u64,
    points: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct Response {
    id: u64,
    probs: Vec<f64>,
}

struct Wire {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// A [`ModelOracle`] backed by a subprocess speaking the wire protocol.
/// Access to one subprocess is serialized; spawn several for parallelism.
pub struct ExternalOracle {
    wire: Mutex<Wire>,
    classes: usize,
    cfg: ProtocolConfig,
    command: String,
}

impl std::fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalOracle")
            .field("command", &self.command)
            .field("classes", &self.classes)
            .finish()
    }
}

fn recv(lines: &Receiver<std::io::Result<String>>, timeout: Duration) -> Result<String> {
    match lines.recv_timeout(timeout) {
        Ok(Ok(line)) => Ok(line),
        Ok(Err(e)) => Err(Error::oracle(format!("read failed: {e}"), None)),
        Err(RecvTimeoutError::Timeout) => Err(Error::oracle(format!("no response within {timeout:?}"), None)),
        Err(RecvTimeoutError::Disconnected) => Err(Error::oracle("model closed its output", None)),
    }
}

impl ExternalOracle {
    /// Spawns `command` through `sh -c` and waits for the handshake.
    pub fn spawn(command: &str, cfg: ProtocolConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::arg("protocol batch size must be positive"));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::oracle(format!("cannot spawn {command:?}: {e}"), None))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let first = recv(&rx, timeout)?;
        let hs: Handshake = serde_json::from_str(&first)
            .map_err(|e| Error::oracle(format!("bad handshake: {e}"), Some(first.clone())))?;
        if hs.classes < 2 {
            return Err(Error::oracle("handshake declares fewer than 2 classes", Some(first)));
        }
        Ok(Self {
            wire: Mutex::new(Wire {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
            classes: hs.classes,
            cfg,
            command: command.to_string(),
        })
    }

    fn round_trip(&self, wire: &mut Wire, chunk: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        let base = wire.next_id;
        wire.next_id += chunk.len() as u64;
        for (k, cloud) in chunk.iter().enumerate() {
            let req = Request {
                id: base + k as u64,
                points: &cloud.points,
            };
            serde_json::to_writer(&mut wire.stdin, &req)?;
            wire.stdin
                .write_all(b"\n")
                .map_err(|e| Error::oracle(format!("write failed: {e}"), None))?;
        }
        wire.stdin
            .flush()
            .map_err(|e| Error::oracle(format!("write failed: {e}"), None))?;
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let mut got: HashMap<u64, Vec<f64>> = HashMap::with_capacity(chunk.len());
        while got.len() < chunk.len() {
            let line = recv(&wire.lines, timeout)?;
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| Error::oracle(format!("malformed response: {e}"), Some(line.clone())))?;
            if resp.id < base || resp.id >= base + chunk.len() as u64 || got.contains_key(&resp.id) {
                return Err(Error::oracle(format!("unexpected response id {}", resp.id), Some(line)));
            }
            if let Err(msg) = validate_probs(&resp.probs, self.classes) {
                return Err(Error::oracle(msg, Some(line)));
            }
            got.insert(resp.id, resp.probs);
        }
        Ok((0..chunk.len() as u64).map(|k| got.remove(&(base + k)).unwrap()).collect())
    }
}

impl ModelOracle for ExternalOracle {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn evaluate(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        let mut wire = self
            .wire
            .lock()
            .map_err(|_| Error::oracle("oracle connection poisoned by an earlier failure", None))?;
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.cfg.batch_size) {
            out.extend(self.round_trip(&mut wire, chunk)?);
        }
        Ok(out)
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(wire) = self.wire.get_mut() {
            let _ = wire.stdin.flush();
            let _ = wire.child.kill();
            let _ = wire.child.wait();
        }
    }
}

/// Serves `oracle` over the wire protocol until `input` closes.
pub fn serve(oracle: &dyn ModelOracle, input: impl BufRead, mut output: impl Write) -> Result<()> {
    serde_json::to_writer(&mut output, &Handshake { classes: oracle.num_classes() })?;
    output.write_all(b"\n")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: IncomingRequest = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("bad request: {e}")))?;
        let cloud = PointCloud::new(req.points)?;
        let probs = oracle.evaluate(std::slice::from_ref(&cloud))?.pop().unwrap();
        serde_json::to_writer(&mut output, &Response { id: req.id, probs })?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
