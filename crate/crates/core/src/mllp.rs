//! Minimal Lower Layer Protocol framing and the upstream MLLP client.
//!
//! On the wire a frame is `0x0B`, the payload, then `0x1C 0x0D`. Bytes that
//! arrive outside a frame envelope are dropped.

use std::collections::VecDeque;
use std::fmt;
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::{timeout, Instant};

use crate::hl7::{Hl7Error, Hl7Message};

pub const START_BLOCK: u8 = 0x0B;
pub const END_BLOCK: u8 = 0x1C;
pub const CARRIAGE_RETURN: u8 = 0x0D;

pub const DEFAULT_MAX_FRAME: usize = 1024 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(5000);

#[derive(Debug, Error)]
pub enum MllpError {
    #[error("payload byte 0x{byte:02X} at offset {offset} is reserved for framing")]
    IllegalPayloadByte { offset: usize, byte: u8 },
    #[error("frame exceeds the {limit} byte limit")]
    FrameTooLarge { limit: usize },
    #[error("connection to {target} failed: {reason}")]
    ConnectFailed { target: String, reason: String },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("malformed response: {0}")]
    Parse(#[from] Hl7Error),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
}

/// Wraps `payload` in an MLLP envelope.
pub fn frame(payload: &[u8]) -> Result<Vec<u8>, MllpError> {
    if let Some(offset) = payload
        .iter()
        .position(|&b| b == START_BLOCK || b == END_BLOCK)
    {
        return Err(MllpError::IllegalPayloadByte {
            offset,
            byte: payload[offset],
        });
    }
    let mut out = Vec::with_capacity(payload.len() + 3);
    out.push(START_BLOCK);
    out.extend_from_slice(payload);
    out.push(END_BLOCK);
    out.push(CARRIAGE_RETURN);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    InFrame,
    SawEnd,
}

/// Incremental frame decoder. Feed it chunks in arrival order; it hands back
/// each payload once the `0x1C 0x0D` trailer has arrived.
#[derive(Debug)]
pub struct Deframer {
    buf: Vec<u8>,
    state: State,
    max_frame: usize,
    discarded: usize,
}

impl Default for Deframer {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_FRAME)
    }
}

impl Deframer {
    pub fn new(max_frame: usize) -> Self {
        Self {
            buf: Vec::new(),
            state: State::Idle,
            max_frame,
            discarded: 0,
        }
    }

    /// Total bytes dropped so far because they were outside a valid frame.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    /// Bytes of the frame currently being assembled.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, chunk: &[u8]) -> Result<Vec<Vec<u8>>, MllpError> {
        let mut out = Vec::new();
        let before = self.discarded;
        for &byte in chunk {
            match (self.state, byte) {
                (State::Idle, START_BLOCK) => self.state = State::InFrame,
                (State::Idle, _) => self.discarded += 1,
                (State::InFrame, START_BLOCK) => {
                    // a new frame started before the old one ended
                    self.discarded += self.buf.len() + 1;
                    self.buf.clear();
                }
                (State::InFrame, END_BLOCK) => self.state = State::SawEnd,
                (State::InFrame, b) => {
                    if self.buf.len() >= self.max_frame {
                        self.buf.clear();
                        self.state = State::Idle;
                        return Err(MllpError::FrameTooLarge {
                            limit: self.max_frame,
                        });
                    }
                    self.buf.push(b);
                }
                (State::SawEnd, CARRIAGE_RETURN) => {
                    out.push(std::mem::take(&mut self.buf));
                    self.state = State::Idle;
                }
                (State::SawEnd, START_BLOCK) => {
                    self.discarded += self.buf.len() + 2;
                    self.buf.clear();
                    self.state = State::InFrame;
                }
                (State::SawEnd, _) => {
                    self.discarded += self.buf.len() + 3;
                    self.buf.clear();
                    self.state = State::Idle;
                }
            }
        }
        if self.discarded > before {
            warn!(
                "mllp: discarded {} byte(s) outside frame envelopes",
                self.discarded - before
            );
        }
        Ok(out)
    }
}

/// Address and credentials of an upstream HL7 server.
#[derive(Clone, PartialEq, Eq)]
pub struct UpstreamEndpoint {
    host: String,
    port: u16,
    user: String,
    password: String,
    timeout: Duration,
    max_frame: usize,
}

impl fmt::Debug for UpstreamEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UpstreamEndpoint")
            .field("host", &self.host)
            .field("port", &self.port)
            .field("user", &self.user)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl UpstreamEndpoint {
    pub fn new(
        host: impl Into<String>,
        port: u16,
        user: impl Into<String>,
        password: impl Into<String>,
    ) -> Result<Self, MllpError> {
        let host = host.into();
        if host.is_empty() {
            return Err(MllpError::InvalidEndpoint("empty host".into()));
        }
        if port == 0 {
            return Err(MllpError::InvalidEndpoint("port must be 1-65535".into()));
        }
        Ok(Self {
            host,
            port,
            user: user.into(),
            password: password.into(),
            timeout: DEFAULT_TIMEOUT,
            max_frame: DEFAULT_MAX_FRAME,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self, MllpError> {
        if timeout.is_zero() {
            return Err(MllpError::InvalidEndpoint(
                "timeout must be positive".into(),
            ));
        }
        self.timeout = timeout;
        Ok(self)
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame;
        self
    }

    pub fn host(&self) -> &str {
        &self.host
    }
    pub fn port(&self) -> u16 {
        self.port
    }
    pub fn user(&self) -> &str {
        &self.user
    }
    pub fn password(&self) -> &str {
        &self.password
    }
    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn target(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

/// A live MLLP client connection. `exchange` takes `&mut self`, so a
/// connection never has more than one query in flight.
#[derive(Debug)]
pub struct UpstreamConnection {
    stream: TcpStream,
    endpoint: UpstreamEndpoint,
    deframer: Deframer,
    pending: VecDeque<Vec<u8>>,
    broken: Option<String>,
}

/// Opens a TCP connection to `endpoint`, giving up after its timeout.
pub async fn connect_upstream(
    endpoint: &UpstreamEndpoint,
) -> Result<UpstreamConnection, MllpError> {
    let target = endpoint.target();
    let attempt = TcpStream::connect((endpoint.host.as_str(), endpoint.port));
    let stream = match timeout(endpoint.timeout, attempt).await {
        Ok(Ok(stream)) => stream,
        Ok(Err(e)) => {
            return Err(MllpError::ConnectFailed {
                target,
                reason: e.to_string(),
            })
        }
        Err(_) => {
            return Err(MllpError::ConnectFailed {
                target,
                reason: format!("timed out after {} ms", endpoint.timeout.as_millis()),
            })
        }
    };
    stream.set_nodelay(true).ok();
    debug!("mllp: connected to {target}");
    Ok(UpstreamConnection {
        stream,
        deframer: Deframer::new(endpoint.max_frame),
        endpoint: endpoint.clone(),
        pending: VecDeque::new(),
        broken: None,
    })
}

impl UpstreamConnection {
    pub fn endpoint(&self) -> &UpstreamEndpoint {
        &self.endpoint
    }

    /// Sends `query` and waits for its response.
    ///
    /// When the query carries a control id (MSH-10), framed replies whose
    /// MSA-2 names a different id are stale answers to an earlier, timed-out
    /// query and are skipped.
    pub async fn exchange(&mut self, query: &Hl7Message) -> Result<Hl7Message, MllpError> {
        if let Some(reason) = &self.broken {
            return Err(MllpError::ConnectionLost(reason.clone()));
        }
        let deadline = Instant::now() + self.endpoint.timeout;
        let control_id = query.field_value("MSH", 10);
        let framed = frame(&query.to_bytes())?;
        if let Err(e) = self.stream.write_all(&framed).await {
            return Err(self.fail(e.to_string()));
        }

        loop {
            while let Some(payload) = self.pending.pop_front() {
                let response = Hl7Message::parse(&payload)?;
                let acked = response.field_value("MSA", 2);
                match (&control_id, acked) {
                    (Some(ours), Some(theirs)) if *ours != theirs => {
                        warn!("mllp: dropping stale response for control id {theirs}");
                    }
                    _ => return Ok(response),
                }
            }
            let mut chunk = [0u8; 4096];
            let read = match tokio::time::timeout_at(deadline, self.stream.read(&mut chunk)).await {
                Err(_) => return Err(MllpError::Timeout(self.endpoint.timeout)),
                Ok(Err(e)) => return Err(self.fail(e.to_string())),
                Ok(Ok(0)) => return Err(self.fail("closed by peer".into())),
                Ok(Ok(n)) => n,
            };
            match self.deframer.push(&chunk[..read]) {
                Ok(frames) => self.pending.extend(frames),
                Err(e) => {
                    self.broken = Some(e.to_string());
                    let _ = self.stream.shutdown().await;
                    return Err(e);
                }
            }
        }
    }

    pub fn is_broken(&self) -> bool {
        self.broken.is_some()
    }

    fn fail(&mut self, reason: String) -> MllpError {
        self.broken = Some(reason.clone());
        MllpError::ConnectionLost(reason)
    }

    pub async fn close(mut self) {
        let _ = self.stream.shutdown().await;
    }
}
