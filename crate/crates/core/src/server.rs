//! The portal's downstream TCP server: one task and one [`Session`] per client,
//! LF-terminated command lines in, one LF-terminated reply line out per command.

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{watch, Semaphore};
use tokio::task::JoinSet;

use crate::eventlog::{Direction, EventLog};
use crate::interpreter::{Interpreter, Session, NOK};
use crate::lexicon::{LexiconError, RegistryHandle};
use crate::mapping::{FieldMapping, MappingError};
use crate::text::decode_bytes;

pub const DEFAULT_LOG_FILE: &str = "simopacServerInterpretare.log";
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(600);
const MAX_LINE: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Languages(#[from] LexiconError),
    #[error("mapping: {0}")]
    Mapping(#[from] MappingError),
    #[error("cannot listen on {addr}: {source}")]
    BindFailed {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen_addr: IpAddr,
    /// 0 picks an ephemeral port.
    pub listen_port: u16,
    pub languages_dir: PathBuf,
    /// `standard`, `simopac`, or a mapping file path.
    pub mapping: String,
    pub log_path: PathBuf,
    pub max_clients: usize,
    pub upstream_timeout: Duration,
    pub idle_timeout: Duration,
}

impl ServerConfig {
    pub fn new(languages_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen_addr: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            listen_port: 7000,
            languages_dir: languages_dir.into(),
            mapping: "standard".into(),
            log_path: DEFAULT_LOG_FILE.into(),
            max_clients: 1024,
            upstream_timeout: crate::mllp::DEFAULT_TIMEOUT,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.max_clients == 0 {
            return Err(ServerError::Config("max clients must be at least 1".into()));
        }
        if self.upstream_timeout.is_zero() {
            return Err(ServerError::Config(
                "upstream timeout must be positive".into(),
            ));
        }
        if self.idle_timeout.is_zero() {
            return Err(ServerError::Config("idle timeout must be positive".into()));
        }
        Ok(())
    }
}

pub struct PortalServer {
    listener: TcpListener,
    interpreter: Interpreter,
    log: Arc<EventLog>,
    max_clients: usize,
    idle_timeout: Duration,
}

impl PortalServer {
    /// Loads languages and mapping, opens the log and binds the listener.
    pub async fn bind(config: ServerConfig) -> Result<Self, ServerError> {
        config.validate()?;
        let registry = RegistryHandle::load(&config.languages_dir)?;
        let mapping = FieldMapping::from_selector(&config.mapping)?;
        let log = Arc::new(EventLog::open(&config.log_path));
        Self::with_parts(config, registry, mapping, log).await
    }

    pub async fn with_parts(
        config: ServerConfig,
        registry: RegistryHandle,
        mapping: FieldMapping,
        log: Arc<EventLog>,
    ) -> Result<Self, ServerError> {
        config.validate()?;
        let addr = SocketAddr::new(config.listen_addr, config.listen_port);
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| ServerError::BindFailed { addr, source })?;
        let interpreter =
            Interpreter::new(registry, mapping).with_upstream_timeout(config.upstream_timeout);
        Ok(Self {
            listener,
            interpreter,
            log,
            max_clients: config.max_clients,
            idle_timeout: config.idle_timeout,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn registry(&self) -> RegistryHandle {
        self.interpreter.registry().clone()
    }

    pub fn log(&self) -> Arc<EventLog> {
        self.log.clone()
    }

    /// Accepts clients until `shutdown` resolves, then closes every session
    /// without sending anything further and waits for them to finish.
    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        let (stop_tx, stop_rx) = watch::channel(false);
        let slots = Arc::new(Semaphore::new(self.max_clients));
        let mut sessions = JoinSet::new();
        tokio::pin!(shutdown);

        loop {
            let (stream, peer) = tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => match accepted {
                    Ok(conn) => conn,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                },
                // reap finished sessions so the set does not grow unbounded
                Some(_) = sessions.join_next(), if !sessions.is_empty() => continue,
            };
            stream.set_nodelay(true).ok();
            let log = self.log.clone();
            match slots.clone().try_acquire_owned() {
                Ok(permit) => {
                    let ctx = ClientTask {
                        interpreter: self.interpreter.clone(),
                        log,
                        idle_timeout: self.idle_timeout,
                        stop: stop_rx.clone(),
                    };
                    sessions.spawn(async move {
                        ctx.serve(stream, peer).await;
                        drop(permit);
                    });
                }
                Err(_) => {
                    sessions.spawn(reject(stream, peer, log, self.max_clients));
                }
            }
        }

        info!("shutting down, closing {} session(s)", sessions.len());
        drop(self.listener);
        let _ = stop_tx.send(true);
        while sessions.join_next().await.is_some() {}
    }
}

async fn reject(mut stream: TcpStream, peer: SocketAddr, log: Arc<EventLog>, max: usize) {
    let id = Session::new().id().to_string();
    log.record(
        &id,
        Direction::Diag,
        &format!("rejected {peer}: {max} clients already connected"),
    );
    let _ = stream.write_all(format!("{NOK}\n").as_bytes()).await;
    let _ = stream.shutdown().await;
}

struct ClientTask {
    interpreter: Interpreter,
    log: Arc<EventLog>,
    idle_timeout: Duration,
    stop: watch::Receiver<bool>,
}

enum LineRead {
    Line(Vec<u8>),
    Eof,
    TooLong,
}

async fn read_line<R: tokio::io::AsyncBufRead + Unpin>(
    reader: &mut R,
) -> std::io::Result<LineRead> {
    let mut buf = Vec::new();
    let n = reader
        .take(MAX_LINE as u64 + 1)
        .read_until(b'\n', &mut buf)
        .await?;
    if n == 0 {
        return Ok(LineRead::Eof);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    } else if buf.len() > MAX_LINE {
        return Ok(LineRead::TooLong);
    }
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    Ok(LineRead::Line(buf))
}

fn single_line(text: &str) -> std::borrow::Cow<'_, str> {
    if text.contains(['\r', '\n']) {
        text.replace(['\r', '\n'], " ").into()
    } else {
        text.into()
    }
}

impl ClientTask {
    async fn serve(mut self, stream: TcpStream, peer: SocketAddr) {
        let mut session = Session::new();
        let id = session.id().to_string();
        self.log.record(&id, Direction::Connect, &peer.to_string());
        let (rd, mut wr) = stream.into_split();
        let mut reader = BufReader::new(rd);

        let reason = loop {
            let read = tokio::select! {
                _ = self.stop.changed() => break "server shutdown".to_string(),
                r = tokio::time::timeout(self.idle_timeout, read_line(&mut reader)) => r,
            };
            let line = match read {
                Err(_) => {
                    self.log.record(
                        &id,
                        Direction::Diag,
                        &format!("idle for {} s, disconnecting", self.idle_timeout.as_secs()),
                    );
                    break "idle timeout".to_string();
                }
                Ok(Err(e)) => break format!("read error: {e}"),
                Ok(Ok(LineRead::Eof)) => break "peer closed".to_string(),
                Ok(Ok(LineRead::TooLong)) => {
                    self.log.record(
                        &id,
                        Direction::Diag,
                        &format!("line longer than {MAX_LINE} bytes"),
                    );
                    break "protocol violation".to_string();
                }
                Ok(Ok(LineRead::Line(bytes))) => decode_bytes(&bytes).into_owned(),
            };

            self.log.record(&id, Direction::Recv, &line);
            let reply = self.interpreter.execute(&mut session, &line).await;
            let text = single_line(&reply.line);
            self.log.record(&id, Direction::Send, &text);
            let mut out = Vec::with_capacity(text.len() + 1);
            out.extend_from_slice(text.as_bytes());
            out.push(b'\n');
            if let Err(e) = wr.write_all(&out).await {
                break format!("write error: {e}");
            }
            if reply.close {
                break "client logout".to_string();
            }
        };

        session.close().await;
        let _ = wr.shutdown().await;
        self.log.record(&id, Direction::Disconnect, &reason);
    }
}
