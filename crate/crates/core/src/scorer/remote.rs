//! Newline-delimited JSON protocol for out-of-process scorers.
//!
//! The server speaks first with a handshake line, then answers every request line with
//! exactly one response line, in request order:
//!
//! ```text
//! <- {"protocol_version":1,"descriptor":{"kind":"monolithic","vocabulary":[...]}}
//! -> {"id":"7","text":"J1<1>T<2>A"}
//! <- {"id":"7","scores":{"Review":0.91,...}}
//! <- {"id":"8","error":"..."}            (a request that could not be scored)
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_scores, ScoreVector, Scorer, ScorerDescriptor};
use crate::error::{Error, Result};
use crate::input::ModelInput;

pub const PROTOCOL_VERSION: u32 = 1;
/// Requests written ahead of reading their responses.
const PIPELINE_WINDOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub descriptor: ScorerDescriptor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn backend(msg: impl Into<String>) -> Error {
    Error::Backend(msg.into())
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Connection {
    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| backend(format!("sidecar read failed: {e}")))?;
        if n == 0 {
            return Err(backend("sidecar closed the connection"));
        }
        Ok(line)
    }

    fn send(&mut self, request: &Request) -> Result<()> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .map_err(|e| backend(format!("sidecar write failed: {e}")))
    }

    fn flush(&mut self) -> Result<()> {
        self.writer
            .flush()
            .map_err(|e| backend(format!("sidecar write failed: {e}")))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A scorer living in another process, reached over TCP or a child's stdio.
pub struct RemoteScorer {
    descriptor: ScorerDescriptor,
    conn: Mutex<Connection>,
}

impl RemoteScorer {
    /// Reads the handshake from an established stream pair.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self> {
        Self::handshake(Connection {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
        })
    }

    /// Connects to `tcp:host:port` (the `tcp:` prefix is optional).
    pub fn connect(address: &str) -> Result<Self> {
        let addr = address.strip_prefix("tcp:").unwrap_or(address);
        let stream = TcpStream::connect(addr)
            .map_err(|e| backend(format!("cannot reach sidecar at {addr}: {e}")))?;
        let _ = stream.set_nodelay(true);
        let read_half = stream
            .try_clone()
            .map_err(|e| backend(format!("socket clone failed: {e}")))?;
        Self::from_streams(BufReader::new(read_half), BufWriter::new(stream))
    }

    /// Starts `program args...` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| backend(format!("cannot start sidecar `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Connection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Box::new(BufWriter::new(stdin)),
            child: Some(child),
        })
    }

    fn handshake(mut conn: Connection) -> Result<Self> {
        let line = conn.read_line()?;
        let hs: Handshake = serde_json::from_str(&line)
            .map_err(|e| backend(format!("bad sidecar handshake: {e}")))?;
        if hs.protocol_version != PROTOCOL_VERSION {
            return Err(backend(format!(
                "sidecar speaks protocol {}, expected {PROTOCOL_VERSION}",
                hs.protocol_version
            )));
        }
        hs.descriptor.validate()?;
        Ok(RemoteScorer {
            descriptor: hs.descriptor,
            conn: Mutex::new(conn),
        })
    }

    /// Reads the response for `expected_id`. The outer error means the stream is unusable;
    /// the inner one is a per-request failure reported by the sidecar.
    fn read_response(
        conn: &mut Connection,
        expected_id: &str,
    ) -> Result<std::result::Result<BTreeMap<String, f64>, Error>> {
        let line = conn.read_line()?;
        let resp: Response = serde_json::from_str(&line)
            .map_err(|e| backend(format!("bad sidecar response: {e}")))?;
        if resp.id != expected_id {
            return Err(backend(format!(
                "sidecar answered `{}` while `{expected_id}` was pending",
                resp.id
            )));
        }
        Ok(match (resp.scores, resp.error) {
            (_, Some(err)) => Err(backend(format!("sidecar failed on `{expected_id}`: {err}"))),
            (Some(scores), None) => Ok(scores),
            (None, None) => Err(backend(format!("sidecar sent no scores for `{expected_id}`"))),
        })
    }
}

impl Scorer for RemoteScorer {
    fn descriptor(&self) -> &ScorerDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreVector>> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| backend("sidecar connection poisoned"))?;
        let mut out = Vec::with_capacity(inputs.len());
        let mut sent = 0;
        while out.len() < inputs.len() {
            while sent < inputs.len() && sent - out.len() < PIPELINE_WINDOW {
                conn.send(&Request {
                    id: inputs[sent].id.clone(),
                    text: inputs[sent].text.clone(),
                })?;
                sent += 1;
            }
            conn.flush()?;
            let id = &inputs[out.len()].id;
            match Self::read_response(&mut conn, id)? {
                Ok(scores) => out.push(ScoreVector {
                    citation_id: id.clone(),
                    scores,
                }),
                Err(e) => {
                    // keep the stream aligned for the next batch
                    for pending in &inputs[out.len() + 1..sent] {
                        let _ = Self::read_response(&mut conn, &pending.id)?;
                    }
                    return Err(e);
                }
            }
        }
        drop(conn);
        check_scores(&self.descriptor, inputs, &out)?;
        Ok(out)
    }
}

/// Serves `scorer` over one connection until the reader hits end of input.
///
/// This is the reference sidecar: any process speaking the same lines is interchangeable
/// with it.
pub fn serve(scorer: &dyn Scorer, reader: impl BufRead, mut writer: impl Write) -> Result<()> {
    let io = |e: std::io::Error| backend(format!("sidecar I/O failed: {e}"));
    let handshake = Handshake {
        protocol_version: PROTOCOL_VERSION,
        descriptor: scorer.descriptor().clone(),
    };
    writeln!(writer, "{}", serde_json::to_string(&handshake)?).map_err(io)?;
    writer.flush().map_err(io)?;

    for line in reader.lines() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                let input = ModelInput {
                    id: req.id.clone(),
                    token_count: req.text.split_whitespace().count(),
                    text: req.text,
                    truncated: false,
                };
                match scorer.score_batch(std::slice::from_ref(&input)) {
                    Ok(mut v) if v.len() == 1 => Response {
                        id: req.id,
                        scores: Some(v.pop().expect("one vector").scores),
                        error: None,
                    },
                    Ok(_) => Response {
                        id: req.id,
                        scores: None,
                        error: Some("scorer returned the wrong number of vectors".into()),
                    },
                    Err(e) => Response {
                        id: req.id,
                        scores: None,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => Response {
                id: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
                    .unwrap_or_default(),
                scores: None,
                error: Some(format!("malformed request: {e}")),
            },
        };
        writeln!(writer, "{}", serde_json::to_string(&response)?).map_err(io)?;
        writer.flush().map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_wire_shape() {
        let ok = Response {
            id: "7".into(),
            scores: Some(BTreeMap::from([("A".into(), 0.5)])),
            error: None,
        };
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"id":"7","scores":{"A":0.5}}"#);
        let err: Response = serde_json::from_str(r#"{"id":"8","error":"boom"}"#).unwrap();
        assert_eq!(err.error.as_deref(), Some("boom"));
        assert!(err.scores.is_none());
    }

    #[test]
    fn handshake_wire_shape() {
        let hs: Handshake = serde_json::from_str(
            r#"{"protocol_version":1,"descriptor":{"kind":"monolithic","vocabulary":["A"]}}"#,
        )
        .unwrap();
        assert_eq!(hs.protocol_version, 1);
        assert_eq!(hs.descriptor.vocabulary, ["A"]);
    }
}
