//! Newline-delimited JSON client for out-of-process denoisers.
//!
//! Frames (one per line, UTF-8):
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"op":"capabilities","max_size":16,"channels":8,"pointwise":true,"deterministic":true}
//! -> {"op":"velocity","id":7,"t":0.5,"size":16,"channels":8,"condition":"...","origin":[0,8,0],"data":"<base64>"}
//! <- {"op":"velocity_ok","id":7,"data":"<base64>"}   or   {"op":"error","id":7,"message":"..."}
//! ```
//!
//! Payloads are little-endian IEEE-754 `f32` in canonical order. Requests are
//! multiplexed by id over one connection and responses may come back in any
//! order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserCapabilities, DenoiserRequest, DenoiserResponse, SizeSupport};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Frame {
    Hello {
        version: u32,
    },
    Capabilities {
        max_size: usize,
        channels: usize,
        pointwise: bool,
        deterministic: bool,
    },
    Velocity {
        id: u64,
        t: f64,
        size: usize,
        channels: usize,
        condition: String,
        origin: [usize; 3],
        data: String,
    },
    VelocityOk {
        id: u64,
        data: String,
    },
    Error {
        id: u64,
        message: String,
    },
}

impl Frame {
    /// Serializes to a single line including the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Frame> {
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("malformed frame: {e}")))
    }
}

pub fn encode_payload(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_payload(data: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(data)
        .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Protocol(format!(
            "payload length {} not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

type Reply = Result<Vec<f32>>;

struct Shared {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    closed: Mutex<Option<String>>,
}

impl Shared {
    fn fail_all(&self, reason: &str) {
        *self.closed.lock().unwrap_or_else(|p| p.into_inner()) = Some(reason.to_string());
        let mut pending = self.pending.lock().unwrap_or_else(|p| p.into_inner());
        for (id, tx) in pending.drain() {
            let _ = tx.send(Err(Error::Transport {
                id,
                message: reason.to_string(),
            }));
        }
    }
}

fn reader_loop<R: BufRead>(mut reader: R, shared: Arc<Shared>) {
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => {
                shared.fail_all("connection closed by denoiser");
                return;
            }
            Err(e) => {
                shared.fail_all(&format!("read failed: {e}"));
                return;
            }
            Ok(_) => {}
        }
        let (id, reply) = match Frame::parse(&line) {
            Ok(Frame::VelocityOk { id, data }) => (id, decode_payload(&data)),
            Ok(Frame::Error { id, message }) => (id, Err(Error::Remote { id, message })),
            Ok(other) => {
                shared.fail_all(&format!("unexpected frame {other:?}"));
                return;
            }
            Err(e) => {
                shared.fail_all(&e.to_string());
                return;
            }
        };
        let tx = shared.pending.lock().unwrap_or_else(|p| p.into_inner()).remove(&id);
        match tx {
            Some(tx) => {
                let _ = tx.send(reply);
            }
            None => {
                shared.fail_all(&format!("response for unknown request id {id}"));
                return;
            }
        }
    }
}

/// Client for a denoiser served over the line protocol.
pub struct RemoteDenoiser {
    shared: Arc<Shared>,
    caps: DenoiserCapabilities,
    max_size: usize,
    next_id: AtomicU64,
    timeout: Duration,
    endpoint: String,
    child: Option<Mutex<Child>>,
}

impl RemoteDenoiser {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    /// Performs the handshake over an established byte stream.
    pub fn from_streams<R, W>(reader: R, writer: W, endpoint: impl Into<String>, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(reader, writer, endpoint.into(), timeout, PROTOCOL_VERSION)
    }

    fn handshake<R, W>(reader: R, mut writer: W, endpoint: String, timeout: Duration, version: u32) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let transport = |message: String| Error::Transport { id: 0, message };
        writer
            .write_all(Frame::Hello { version }.to_line().as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| transport(format!("handshake write failed: {e}")))?;
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| transport(format!("handshake read failed: {e}")))?;
        if n == 0 {
            return Err(transport("connection closed during handshake".into()));
        }
        let (max_size, channels, pointwise, deterministic) = match Frame::parse(&line)? {
            Frame::Capabilities {
                max_size,
                channels,
                pointwise,
                deterministic,
            } => (max_size, channels, pointwise, deterministic),
            Frame::Error { message, .. } => return Err(Error::Protocol(format!("handshake rejected: {message}"))),
            other => return Err(Error::Protocol(format!("expected capabilities, got {other:?}"))),
        };
        let shared = Arc::new(Shared {
            writer: Mutex::new(Box::new(writer)),
            pending: Mutex::new(HashMap::new()),
            closed: Mutex::new(None),
        });
        let reader_shared = shared.clone();
        thread::Builder::new()
            .name("denoiser-reader".into())
            .spawn(move || reader_loop(reader, reader_shared))?;
        Ok(Self {
            shared,
            caps: DenoiserCapabilities {
                sizes: SizeSupport::Cubic { max: max_size },
                channels: Some(channels),
                pointwise,
                deterministic,
            },
            max_size,
            next_id: AtomicU64::new(1),
            timeout,
            endpoint,
            child: None,
        })
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport {
            id: 0,
            message: format!("connect {addr}: {e}"),
        })?;
        stream.set_nodelay(true).ok();
        let reader = stream.try_clone()?;
        Self::from_streams(reader, stream, format!("tcp:{addr}"), timeout)
    }

    /// Spawns `command` (split on whitespace) and talks over its stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty denoiser command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport {
                id: 0,
                message: format!("spawn {command:?}: {e}"),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = match Self::from_streams(stdout, stdin, format!("cmd:{command}"), timeout) {
            Ok(c) => c,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e);
            }
        };
        client.child = Some(Mutex::new(child));
        Ok(client)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    fn send(&self, frame: &Frame, id: u64) -> Result<()> {
        let mut w = self.shared.writer.lock().unwrap_or_else(|p| p.into_inner());
        w.write_all(frame.to_line().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::Transport {
                id,
                message: format!("write failed: {e}"),
            })
    }
}

impl Denoiser for RemoteDenoiser {
    fn name(&self) -> String {
        format!("remote({})", self.endpoint)
    }

    fn capabilities(&self) -> DenoiserCapabilities {
        self.caps
    }

    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        req.validate()?;
        self.caps.check(req)?;
        let size = req.cubic_size().expect("checked cubic");
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        {
            // register before sending so a fast reply cannot race the table
            let closed = self.shared.closed.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(reason) = closed.as_ref() {
                return Err(Error::Transport {
                    id,
                    message: reason.clone(),
                });
            }
            self.shared
                .pending
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .insert(id, tx);
        }
        let frame = Frame::Velocity {
            id,
            t: req.t,
            size,
            channels: req.channels,
            condition: req.condition.to_string(),
            origin: req.origin,
            data: encode_payload(req.values),
        };
        if let Err(e) = self.send(&frame, id) {
            self.shared
                .pending
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .remove(&id);
            return Err(e);
        }
        let data = match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply?,
            Err(RecvTimeoutError::Timeout) => {
                self.shared
                    .pending
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .remove(&id);
                return Err(Error::Transport {
                    id,
                    message: format!("timed out after {:?}", self.timeout),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Transport {
                    id,
                    message: "reader stopped".into(),
                })
            }
        };
        if data.len() != req.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "request {id}: response has {} values, expected {}",
                data.len(),
                req.values.len()
            )));
        }
        Ok(DenoiserResponse::new(data))
    }
}

impl Drop for RemoteDenoiser {
    fn drop(&mut self) {
        if let Some(child) = self.child.take() {
            let mut child = child.into_inner().unwrap_or_else(|p| p.into_inner());
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_round_trip_is_bitwise() {
        let v = vec![0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, -3.25e-20, 7.0e30];
        let back = decode_payload(&encode_payload(&v)).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn frames_match_wire_shape() {
        assert_eq!(
            Frame::Hello { version: 1 }.to_line(),
            "{\"op\":\"hello\",\"version\":1}\n"
        );
        let ok = Frame::parse("{\"op\":\"velocity_ok\",\"id\":3,\"data\":\"AACAPw==\"}").unwrap();
        assert_eq!(
            ok,
            Frame::VelocityOk {
                id: 3,
                data: "AACAPw==".into()
            }
        );
        assert_eq!(decode_payload("AACAPw==").unwrap(), vec![1.0]);
        let caps = Frame::parse(
            "{\"op\":\"capabilities\",\"max_size\":16,\"channels\":4,\"pointwise\":true,\"deterministic\":true}",
        )
        .unwrap();
        assert!(matches!(
            caps,
            Frame::Capabilities {
                max_size: 16,
                channels: 4,
                ..
            }
        ));
        assert!(Frame::parse("{\"op\":\"nope\"}").is_err());
        assert!(!Frame::Error {
            id: 1,
            message: "a\nb".into()
        }
        .to_line()
        .trim_end()
        .contains('\n'));
    }

    #[test]
    fn rejected_handshake_fails_cleanly() {
        let reply = Frame::Error {
            id: 0,
            message: "unsupported version".into(),
        }
        .to_line();
        let sink: Vec<u8> = Vec::new();
        let r = RemoteDenoiser::from_streams(
            std::io::Cursor::new(reply.into_bytes()),
            sink,
            "test",
            Duration::from_secs(1),
        );
        assert!(matches!(r, Err(Error::Protocol(m)) if m.contains("unsupported version")));
    }
}
