#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use hl7_portal::hl7::{EncodingChars, Field, Hl7Message, Hl7Segment};
use proptest::prelude::*;

pub const PORTAL_BIN: &str = env!("CARGO_BIN_EXE_hl7-portal");
pub const MOCK_BIN: &str = env!("CARGO_BIN_EXE_mock-hl7-server");
pub const CLIENT_BIN: &str = env!("CARGO_BIN_EXE_hl7-portal-client");

pub const SAMPLE_CNP: &str = "1750916334996";

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn languages_dir() -> PathBuf {
    crate_dir().join("languages")
}

pub fn fixture(name: &str) -> PathBuf {
    crate_dir().join("fixtures").join(name)
}

/// A child process killed on drop.
pub struct Proc {
    child: Child,
    pub addr: SocketAddr,
}

impl Proc {
    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn is_running(&mut self) -> bool {
        matches!(self.child.try_wait(), Ok(None))
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts `cmd` and waits for its `listening on <addr>` line.
pub fn spawn_listening(mut cmd: Command) -> Proc {
    let mut child = cmd
        .env("RUST_LOG", "warn")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn");
    let stdout = child.stdout.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(stdout);
        let mut line = String::new();
        let _ = reader.read_line(&mut line);
        let _ = tx.send(line);
        // keep draining so the child never blocks on a full pipe
        let _ = std::io::copy(&mut reader, &mut std::io::sink());
    });
    let line = match rx.recv_timeout(Duration::from_secs(10)) {
        Ok(line) => line,
        Err(_) => {
            let _ = child.kill();
            panic!("{cmd:?} did not report its address");
        }
    };
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .and_then(|a| a.parse().ok())
        .unwrap_or_else(|| {
            let _ = child.kill();
            panic!("unexpected startup line {line:?}")
        });
    Proc { child, addr }
}

pub fn start_mock(fixtures: &Path, extra: &[&str]) -> Proc {
    let mut cmd = Command::new(MOCK_BIN);
    cmd.args(["--port", "0", "--fixtures"])
        .arg(fixtures)
        .args(extra);
    spawn_listening(cmd)
}

pub fn start_portal(mapping: &str, languages: &Path, log: &Path, extra: &[&str]) -> Proc {
    let mut cmd = Command::new(PORTAL_BIN);
    cmd.args(["--port", "0", "--bind", "127.0.0.1", "--mapping", mapping])
        .arg("--languages-dir")
        .arg(languages)
        .arg("--log-file")
        .arg(log)
        .args(extra);
    spawn_listening(cmd)
}

pub fn client_command(port: u16, commands: &[String]) -> Command {
    let mut cmd = Command::new(CLIENT_BIN);
    cmd.args(["--host", "127.0.0.1", "--port", &port.to_string()]);
    for c in commands {
        cmd.arg("-c").arg(c);
    }
    cmd.stdin(Stdio::null());
    cmd
}

pub fn run_client(port: u16, commands: &[String]) -> Output {
    client_command(port, commands).output().expect("run client")
}

/// Replies from `command -> reply` transcript lines.
pub fn replies(transcript: &str) -> Vec<String> {
    transcript
        .lines()
        .map(|l| l.split_once(" -> ").map_or(l, |(_, r)| r).to_string())
        .collect()
}

/// One parsed event-log line.
#[derive(Debug, Clone)]
pub struct LogRecord {
    pub session: String,
    pub direction: String,
    pub text: String,
}

pub fn read_log(path: &Path) -> Vec<LogRecord> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| {
            let mut parts = l.splitn(4, ' ');
            let _ts = parts.next()?;
            Some(LogRecord {
                session: parts.next()?.to_string(),
                direction: parts.next()?.to_string(),
                text: parts.next().unwrap_or("").to_string(),
            })
        })
        .collect()
}

// generators

const DELIMITER_SETS: [&[u8; 5]; 4] = [b"|^~\\&", b"#$*!%", b"|:;@+", b"/,.?-"];

pub fn arb_encoding() -> impl Strategy<Value = EncodingChars> {
    prop_oneof![
        3 => Just(EncodingChars::default()),
        1 => (1..DELIMITER_SETS.len()).prop_map(|i| {
            let d = DELIMITER_SETS[i];
            EncodingChars::new(d[0], d[1], d[2], d[3], d[4]).unwrap()
        }),
    ]
}

/// Printable text that freely includes every delimiter set and some non-ASCII.
pub fn arb_printable() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            6 => prop::char::range(' ', '~'),
            1 => prop::sample::select(vec!['ă', 'î', 'ș', 'ț', 'é', 'ü', '€', '中']),
        ],
        0..24,
    )
    .prop_map(|cs| cs.into_iter().collect())
}

fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![
        2 => Just(String::new()),
        5 => arb_printable(),
        1 => arb_printable().prop_map(|s| format!("{s}\r\n{s}")),
    ]
}

pub fn arb_field() -> impl Strategy<Value = Field> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(arb_text(), 1..3), 1..4),
        1..3,
    )
    .prop_map(Field::from_repetitions)
}

fn arb_segment_name() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec!["PID", "PV1", "OBX", "EVN", "NK1", "ZDS", "QPD"])
            .prop_map(String::from),
        "[A-Z][A-Z0-9]{2}".prop_filter("MSH only leads", |n| n != "MSH"),
    ]
}

pub fn arb_message() -> impl Strategy<Value = Hl7Message> {
    let body = prop::collection::vec(
        (
            arb_segment_name(),
            prop::collection::vec(arb_field(), 0..12),
        ),
        0..6,
    );
    (
        arb_encoding(),
        prop::collection::vec(arb_field(), 0..12),
        body,
    )
        .prop_map(|(enc, msh_rest, body)| {
            let mut segments = vec![Hl7Segment::msh(&enc, msh_rest)];
            segments.extend(
                body.into_iter()
                    .map(|(name, fields)| Hl7Segment::new(&name, fields).unwrap()),
            );
            Hl7Message::new(enc, segments).unwrap()
        })
}

/// Payloads free of the MLLP block characters.
pub fn arb_payloads() -> impl Strategy<Value = Vec<Vec<u8>>> {
    let byte = any::<u8>().prop_filter("block char", |b| *b != 0x0B && *b != 0x1C);
    prop::collection::vec(prop::collection::vec(byte, 0..300), 1..8)
}
