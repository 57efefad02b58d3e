//! Line-protocol client for the portal.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::interpreter::NOK;
use crate::text::decode_bytes;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {target}: {source}")]
    ConnectFailed { target: String, source: io::Error },
    #[error("connection closed by the portal")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct PortalClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl PortalClient {
    pub fn connect(host: &str, port: u16, timeout: Duration) -> Result<Self, ClientError> {
        let target = format!("{host}:{port}");
        let connect_err = |source| ClientError::ConnectFailed {
            target: target.clone(),
            source,
        };
        let addrs: Vec<_> = (host, port)
            .to_socket_addrs()
            .map_err(connect_err)?
            .collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true).ok();
                    let reader = BufReader::new(stream.try_clone()?);
                    return Ok(Self {
                        writer: stream,
                        reader,
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(connect_err(last))
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.writer.set_read_timeout(timeout)
    }

    /// Sends one command and returns the reply line without its terminator.
    pub fn send(&mut self, command: &str) -> Result<String, ClientError> {
        self.writer.write_all(command.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.read_reply()
    }

    /// Reads one reply line.
    pub fn read_reply(&mut self) -> Result<String, ClientError> {
        let mut buf = Vec::new();
        if self.reader.read_until(b'\n', &mut buf)? == 0 {
            return Err(ClientError::Closed);
        }
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        Ok(decode_bytes(&buf).into_owned())
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    /// Commands from an input stream; only replies are printed.
    Interactive,
    /// One command per line; `#` comments and blank lines are skipped.
    Script(PathBuf),
    Inline(Vec<String>),
}

/// Commands of a script, in order.
pub fn script_commands(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Summary {
    pub commands: usize,
    pub failures: usize,
}

impl Summary {
    /// Process exit status: with `strict`, nonzero if any reply was `NOK`.
    pub fn exit_code(&self, strict: bool) -> i32 {
        if strict && self.failures > 0 {
            1
        } else {
            0
        }
    }
}

/// Drives one session. Script and inline modes print `command -> reply`.
pub fn run<R: BufRead, W: Write>(
    client: &mut PortalClient,
    source: &Source,
    input: R,
    out: &mut W,
) -> Result<Summary, ClientError> {
    let mut summary = Summary::default();
    let mut step = |cmd: &str, echo: bool, out: &mut W| -> Result<(), ClientError> {
        let reply = client.send(cmd)?;
        summary.commands += 1;
        if reply == NOK {
            summary.failures += 1;
        }
        if echo {
            writeln!(out, "{cmd} -> {reply}")?;
        } else {
            writeln!(out, "{reply}")?;
        }
        out.flush()?;
        Ok(())
    };
    match source {
        Source::Interactive => {
            for line in input.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                step(line.trim(), false, out)?;
            }
        }
        Source::Script(path) => {
            let text = std::fs::read(path)?;
            for cmd in script_commands(&decode_bytes(&text)) {
                step(&cmd, true, out)?;
            }
        }
        Source::Inline(cmds) => {
            for cmd in cmds {
                step(cmd, true, out)?;
            }
        }
    }
    Ok(summary)
}
