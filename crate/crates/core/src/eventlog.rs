//! Append-only event log: one line per connection event, command and reply.
//!
//! Line format: `<timestamp> <session> <DIRECTION> <text>`, with the
//! timestamp in UTC ISO-8601 at millisecond precision.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Connect,
    Recv,
    Send,
    Disconnect,
    Diag,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Connect => "CONNECT",
            Direction::Recv => "RECV",
            Direction::Send => "SEND",
            Direction::Disconnect => "DISCONNECT",
            Direction::Diag => "DIAG",
        })
    }
}

/// Escapes backslashes and line terminators so a record stays on one line.
pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\r' => out.push_str("\\r"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

pub fn format_record(at: DateTime<Utc>, session: &str, direction: Direction, text: &str) -> String {
    format!(
        "{} {session} {direction} {}\n",
        at.format("%Y-%m-%dT%H:%M:%S%.3fZ"),
        escape_text(text)
    )
}

#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
}

impl EventLog {
    /// Opens (or creates) `path` for appending. An unwritable path is
    /// reported on stderr; the log then retries on every record.
    pub fn open(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref().to_path_buf();
        let file = open_append(&path)
            .map_err(|e| eprintln!("event log {}: {e}", path.display()))
            .ok();
        Self {
            path: Some(path),
            file: Mutex::new(file),
        }
    }

    /// A log that drops every record.
    pub fn disabled() -> Self {
        Self {
            path: None,
            file: Mutex::new(None),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends one record with a single write. Never fails; errors go to stderr.
    pub fn record(&self, session: &str, direction: Direction, text: &str) {
        let Some(path) = &self.path else { return };
        let line = format_record(Utc::now(), session, direction, text);
        let mut guard = self.file.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = open_append(path).ok();
        }
        let Some(file) = guard.as_mut() else {
            eprintln!(
                "event log {} unwritable, dropped: {}",
                path.display(),
                line.trim_end()
            );
            return;
        };
        if let Err(e) = file.write_all(line.as_bytes()) {
            eprintln!("event log {}: {e}", path.display());
            *guard = None;
        }
    }
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}
