//! A stand-in HL7 server for tests and demos: answers MLLP-framed patient
//! queries from a fixture file.
//!
//! Fixture files hold blank-line-separated records:
//!
//! ```text
//! cnp=1750916334996
//! PID||||C. Marius|Timpau|1975.09.16|M|...
//! ```

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use log::{debug, info, warn};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinSet;

use crate::hl7::{EncodingChars, Hl7Message, Hl7Segment};
use crate::mllp::{frame, Deframer};
use crate::qbp::{self, ResponseKind};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("record {record}: {reason}")]
    Invalid { record: usize, reason: String },
    #[error("cannot read fixtures: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientFixture {
    pub cnp: String,
    /// Raw ER7 PID line, returned verbatim.
    pub pid_line: String,
}

impl PatientFixture {
    pub fn new(cnp: impl Into<String>, pid_line: impl Into<String>) -> Result<Self, FixtureError> {
        let fixture = Self {
            cnp: cnp.into(),
            pid_line: pid_line.into(),
        };
        fixture.check(1)?;
        Ok(fixture)
    }

    fn check(&self, record: usize) -> Result<(), FixtureError> {
        let invalid = |reason: String| FixtureError::Invalid { record, reason };
        if self.cnp.is_empty() {
            return Err(invalid("empty cnp".into()));
        }
        let seg = Hl7Segment::parse(&self.pid_line, &EncodingChars::default())
            .map_err(|e| invalid(e.to_string()))?;
        if seg.name() != "PID" {
            return Err(invalid(format!(
                "expected a PID segment, got {}",
                seg.name()
            )));
        }
        Ok(())
    }
}

pub fn parse_fixtures(text: &str) -> Result<Vec<PatientFixture>, FixtureError> {
    let mut out: Vec<PatientFixture> = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut record = 0;
    let lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.starts_with('#'))
        .chain(std::iter::once(""));
    for line in lines {
        if !line.trim().is_empty() {
            block.push(line);
            continue;
        }
        if block.is_empty() {
            continue;
        }
        record += 1;
        let invalid = |reason: &str| FixtureError::Invalid {
            record,
            reason: reason.to_string(),
        };
        let [head, pid] = block[..] else {
            return Err(invalid(
                "expected exactly two lines: cnp=<value> and a PID segment",
            ));
        };
        let cnp = head
            .strip_prefix("cnp=")
            .ok_or_else(|| invalid("first line must be cnp=<value>"))?
            .trim();
        let fixture = PatientFixture {
            cnp: cnp.to_string(),
            pid_line: pid.to_string(),
        };
        fixture.check(record)?;
        if out.iter().any(|f| f.cnp == fixture.cnp) {
            return Err(invalid("duplicate cnp"));
        }
        out.push(fixture);
        block.clear();
    }
    Ok(out)
}

pub fn load_fixtures(path: impl AsRef<Path>) -> Result<Vec<PatientFixture>, FixtureError> {
    parse_fixtures(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Misbehavior {
    /// Read queries, never answer.
    Silent,
    /// Answer with stray bytes and a framed non-HL7 payload.
    Garbage,
}

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// When set, queries must carry `user:password` in MSH-8.
    pub credentials: Option<(String, String)>,
    pub misbehave: Option<Misbehavior>,
}

const GARBAGE_STRAY: &[u8] = b"\x00\xffnot mllp\r\n";
const GARBAGE_FRAME: &[u8] = b"??garbage??\r~~~";

#[derive(Debug)]
struct Responder {
    patients: HashMap<String, String>,
    options: MockOptions,
}

impl Responder {
    /// Bytes to send back for one deframed payload, or `None` to stay quiet.
    fn respond(&self, payload: &[u8]) -> Option<Vec<u8>> {
        match self.options.misbehave {
            Some(Misbehavior::Silent) => return None,
            Some(Misbehavior::Garbage) => {
                let mut out = GARBAGE_STRAY.to_vec();
                out.extend(frame(GARBAGE_FRAME).expect("no framing bytes"));
                return Some(out);
            }
            None => {}
        }
        let query = match Hl7Message::parse(payload) {
            Ok(q) => q,
            Err(e) => {
                warn!("mock: unparseable query: {e}");
                return None;
            }
        };
        let bytes = self.answer(&query);
        Some(frame(&bytes).expect("responses contain no framing bytes"))
    }

    fn answer(&self, query: &Hl7Message) -> Vec<u8> {
        if let Some((user, password)) = &self.options.credentials {
            let expected = qbp::security_token(user, password);
            if qbp::query_security(query).as_deref() != Some(expected.as_str()) {
                return qbp::response_bytes(query, ResponseKind::Rejected, None);
            }
        }
        let cnp = qbp::query_cnp(query);
        match cnp.as_deref().and_then(|c| self.patients.get(c)) {
            Some(pid) => qbp::response_bytes(query, ResponseKind::Found, Some(pid)),
            None => {
                debug!("mock: no patient for {cnp:?}");
                qbp::response_bytes(query, ResponseKind::NotFound, None)
            }
        }
    }
}

pub struct MockServer {
    listener: TcpListener,
    responder: Arc<Responder>,
}

impl MockServer {
    pub async fn bind(
        addr: SocketAddr,
        fixtures: Vec<PatientFixture>,
        options: MockOptions,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let patients = fixtures.into_iter().map(|f| (f.cnp, f.pid_line)).collect();
        Ok(Self {
            listener,
            responder: Arc::new(Responder { patients, options }),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        let (stop_tx, stop_rx) = watch::channel(false);
        let mut conns = JoinSet::new();
        tokio::pin!(shutdown);
        loop {
            let (stream, peer) = tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => match accepted {
                    Ok(c) => c,
                    Err(e) => { warn!("mock: accept failed: {e}"); continue; }
                },
                Some(_) = conns.join_next(), if !conns.is_empty() => continue,
            };
            let responder = self.responder.clone();
            let stop = stop_rx.clone();
            conns.spawn(serve_connection(stream, peer, responder, stop));
        }
        drop(self.listener);
        let _ = stop_tx.send(true);
        while conns.join_next().await.is_some() {}
    }
}

async fn serve_connection(
    mut stream: TcpStream,
    peer: SocketAddr,
    responder: Arc<Responder>,
    mut stop: watch::Receiver<bool>,
) {
    info!("mock: connection from {peer}");
    let mut deframer = Deframer::default();
    let mut chunk = [0u8; 4096];
    loop {
        let n = tokio::select! {
            _ = stop.changed() => break,
            r = stream.read(&mut chunk) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
        };
        let payloads = match deframer.push(&chunk[..n]) {
            Ok(p) => p,
            Err(e) => {
                warn!("mock: {peer}: {e}");
                break;
            }
        };
        for payload in payloads {
            if let Some(reply) = responder.respond(&payload) {
                if stream.write_all(&reply).await.is_err() {
                    return;
                }
            }
        }
    }
    debug!("mock: {peer} closed");
}
