//! The downstream command language and per-client session state.
//!
//! Every command is a single line such as `nume();` or
//! `utilizarePacient(1750916334996, ro);`. Each command has a Romanian and an
//! English spelling that behave identically. Commands answer `OK`, `NOK`, or
//! a data value; the reason for the latest `NOK` is kept for `ultimaEroare()`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::hl7::{EncodingChars, Hl7Message, Hl7Segment};
use crate::lexicon::{
    LanguagePack, LanguageRegistry, RegistryHandle, Special, MSH_EVENT_TYPE, MSH_MESSAGE_TYPE,
};
use crate::mapping::{FieldMapping, Getter};
use crate::mllp::{connect_upstream, UpstreamConnection, UpstreamEndpoint, DEFAULT_TIMEOUT};
use crate::qbp;

pub const OK: &str = "OK";
pub const NOK: &str = "NOK";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandRequest {
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct SyntaxError(pub String);

/// Parses `name '(' [arg (',' arg)*] ')' [';']`. Arguments are trimmed.
pub fn parse_command(line: &str) -> Result<CommandRequest, SyntaxError> {
    let line = line.trim();
    let open = line
        .find('(')
        .ok_or_else(|| SyntaxError("missing '('".into()))?;
    let name = &line[..open];
    let mut chars = name.chars();
    let ident_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !ident_ok {
        return Err(SyntaxError(format!("invalid command name {name:?}")));
    }
    let rest = &line[open + 1..];
    let close = rest
        .find(')')
        .ok_or_else(|| SyntaxError("missing ')'".into()))?;
    let tail = rest[close + 1..].trim_end();
    if !(tail.is_empty() || tail == ";") {
        return Err(SyntaxError(format!("unexpected text after ')': {tail:?}")));
    }
    let inner = &rest[..close];
    if inner.contains('(') {
        return Err(SyntaxError("unexpected '('".into()));
    }
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(|a| a.trim().to_string()).collect()
    };
    Ok(CommandRequest {
        name: name.to_string(),
        args,
    })
}

/// Canonical command identity, shared by both spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandId {
    Connect,
    UsePatient,
    Get(Getter),
    LastError,
    Disconnect,
}

impl CommandId {
    pub fn all() -> impl Iterator<Item = CommandId> {
        [CommandId::Connect, CommandId::UsePatient]
            .into_iter()
            .chain(Getter::ALL.into_iter().map(CommandId::Get))
            .chain([CommandId::LastError, CommandId::Disconnect])
    }

    /// (Romanian, English) spellings.
    pub fn aliases(self) -> (&'static str, &'static str) {
        match self {
            CommandId::Connect => ("conectare", "login"),
            CommandId::UsePatient => ("utilizarePacient", "usePatient"),
            CommandId::Get(g) => (g.romanian(), g.english()),
            CommandId::LastError => ("ultimaEroare", "getLastError"),
            CommandId::Disconnect => ("deconectare", "logout"),
        }
    }

    fn arity(self) -> usize {
        match self {
            CommandId::Connect => 4,
            CommandId::UsePatient => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandId::Connect => f.write_str("CONNECT"),
            CommandId::UsePatient => f.write_str("USE_PATIENT"),
            CommandId::Get(g) => f.write_str(g.canonical()),
            CommandId::LastError => f.write_str("LAST_ERROR"),
            CommandId::Disconnect => f.write_str("DISCONNECT"),
        }
    }
}

/// Maps either spelling of a command to its id. Case-sensitive.
pub fn resolve_alias(name: &str) -> Option<CommandId> {
    CommandId::all().find(|id| {
        let (ro, en) = id.aliases();
        ro == name || en == name
    })
}

/// Reasons a command failed, rendered in the session's language.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Failure {
    Syntax(String),
    UnknownCommand(String),
    Arity {
        command: String,
        expected: usize,
        got: usize,
    },
    BadPort(String),
    EmptyCnp,
    ConnectFailed(String),
    NotConnected,
}

impl Failure {
    fn render(&self, language: Option<&str>) -> String {
        use Failure::*;
        match (language, self) {
            (Some("ro"), Syntax(d)) => format!("Comanda invalida: {d}"),
            (Some("ro"), UnknownCommand(n)) => format!("Comanda necunoscuta: {n}"),
            (
                Some("ro"),
                Arity {
                    command,
                    expected,
                    got,
                },
            ) => {
                format!("{command} asteapta {expected} argumente, primite {got}")
            }
            (Some("ro"), BadPort(p)) => format!("Port invalid: {p:?}"),
            (Some("ro"), EmptyCnp) => "CNP lipsa".to_string(),
            (Some("ro"), ConnectFailed(d)) => format!("Conectare esuata: {d}"),
            (Some("ro"), NotConnected) => "Nu exista conexiune la serverul HL7".to_string(),
            (_, Syntax(d)) => format!("Invalid command: {d}"),
            (_, UnknownCommand(n)) => format!("Unknown command: {n}"),
            (
                _,
                Arity {
                    command,
                    expected,
                    got,
                },
            ) => {
                format!("{command} expects {expected} arguments, got {got}")
            }
            (_, BadPort(p)) => format!("Invalid port: {p:?}"),
            (_, EmptyCnp) => "Missing CNP".to_string(),
            (_, ConnectFailed(d)) => format!("Connection failed: {d}"),
            (_, NotConnected) => "Not connected to an HL7 server".to_string(),
        }
    }
}

/// Used only when no language pack is loaded at all.
const FALLBACK_FILES_NOT_FOUND: &str = "HL7 files not found! Please choose another language!";
const FALLBACK_NONE: &str = "None";
const FALLBACK_NOT_PRESENT: &str = "Not present";

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

/// State of one downstream client.
#[derive(Debug)]
pub struct Session {
    id: String,
    language: Option<String>,
    upstream: Option<UpstreamConnection>,
    patient: Option<Hl7Message>,
    last_error: Option<String>,
    authenticated: bool,
    next_control_id: u64,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        let n = NEXT_SESSION.fetch_add(1, Ordering::Relaxed);
        Self {
            id: format!("S{n:06}"),
            language: None,
            upstream: None,
            patient: None,
            last_error: None,
            authenticated: false,
            next_control_id: 1,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn language(&self) -> Option<&str> {
        self.language.as_deref()
    }

    pub fn patient(&self) -> Option<&Hl7Message> {
        self.patient.as_ref()
    }

    pub fn last_error(&self) -> Option<&str> {
        self.last_error.as_deref()
    }

    pub fn is_authenticated(&self) -> bool {
        self.authenticated
    }

    pub fn is_connected(&self) -> bool {
        self.upstream.is_some()
    }

    /// Drops the upstream connection, if any.
    pub async fn close(&mut self) {
        if let Some(conn) = self.upstream.take() {
            conn.close().await;
        }
        self.authenticated = false;
    }
}

/// One command's answer. `close` asks the server to end the session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub line: String,
    pub close: bool,
}

impl Reply {
    fn line(line: impl Into<String>) -> Self {
        Self {
            line: line.into(),
            close: false,
        }
    }
}

/// Executes commands against sessions. Shared by all sessions of a server.
#[derive(Debug, Clone)]
pub struct Interpreter {
    registry: RegistryHandle,
    mapping: Arc<FieldMapping>,
    upstream_timeout: Duration,
}

impl Interpreter {
    pub fn new(registry: RegistryHandle, mapping: FieldMapping) -> Self {
        Self {
            registry,
            mapping: Arc::new(mapping),
            upstream_timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_upstream_timeout(mut self, timeout: Duration) -> Self {
        self.upstream_timeout = timeout;
        self
    }

    pub fn registry(&self) -> &RegistryHandle {
        &self.registry
    }

    pub fn mapping(&self) -> &FieldMapping {
        &self.mapping
    }

    /// Runs one protocol line. The registry snapshot is taken once, so a
    /// command never mixes strings from two reload generations.
    pub async fn execute(&self, session: &mut Session, line: &str) -> Reply {
        let registry = self.registry.snapshot();
        let mut ctx = Ctx {
            registry: &registry,
            session,
        };
        let request = match parse_command(line) {
            Ok(r) => r,
            Err(SyntaxError(detail)) => return ctx.fail_with(Failure::Syntax(detail)),
        };
        let Some(id) = resolve_alias(&request.name) else {
            return ctx.fail_with(Failure::UnknownCommand(request.name));
        };
        if request.args.len() != id.arity() {
            return ctx.fail_with(Failure::Arity {
                command: request.name,
                expected: id.arity(),
                got: request.args.len(),
            });
        }
        debug!("{}: {id} {:?}", ctx.session.id, request.args);
        match id {
            CommandId::Connect => {
                let [ip, port, user, password] = &request.args[..] else {
                    unreachable!("arity checked")
                };
                self.connect(&mut ctx, ip, port, user, password).await
            }
            CommandId::UsePatient => {
                let [cnp, language] = &request.args[..] else {
                    unreachable!("arity checked")
                };
                self.use_patient(&mut ctx, cnp, language).await
            }
            CommandId::Get(getter) => self.get(&mut ctx, getter),
            CommandId::LastError => Reply::line(ctx.last_error()),
            CommandId::Disconnect => {
                ctx.session.close().await;
                Reply {
                    line: OK.into(),
                    close: true,
                }
            }
        }
    }

    async fn connect(
        &self,
        ctx: &mut Ctx<'_>,
        host: &str,
        port: &str,
        user: &str,
        password: &str,
    ) -> Reply {
        let port_no = match port.parse::<u16>() {
            Ok(p) if p != 0 => p,
            _ => return ctx.fail_with(Failure::BadPort(port.to_string())),
        };
        ctx.session.close().await;
        let endpoint = match UpstreamEndpoint::new(host, port_no, user, password)
            .and_then(|ep| ep.with_timeout(self.upstream_timeout))
        {
            Ok(ep) => ep,
            Err(e) => return ctx.fail_with(Failure::ConnectFailed(e.to_string())),
        };
        match connect_upstream(&endpoint).await {
            Ok(conn) => {
                ctx.session.upstream = Some(conn);
                ctx.session.authenticated = true;
                Reply::line(OK)
            }
            Err(e) => ctx.fail_with(Failure::ConnectFailed(e.to_string())),
        }
    }

    async fn use_patient(&self, ctx: &mut Ctx<'_>, cnp: &str, language: &str) -> Reply {
        if ctx.registry.get(language).is_none() {
            let text = ctx
                .registry
                .default_pack()
                .map_or(FALLBACK_FILES_NOT_FOUND, |p| {
                    p.special(Special::FilesNotFound)
                })
                .to_string();
            return ctx.fail(text);
        }
        ctx.session.language = Some(language.to_string());
        if cnp.is_empty() {
            return ctx.fail_with(Failure::EmptyCnp);
        }
        let control_id = ctx.session.next_control_id.to_string();
        ctx.session.next_control_id += 1;
        let Some(conn) = ctx.session.upstream.as_mut() else {
            return ctx.fail_with(Failure::NotConnected);
        };
        let timestamp = chrono::Utc::now().format("%Y%m%d%H%M%S").to_string();
        let endpoint = conn.endpoint();
        let query = qbp::patient_query(
            cnp,
            endpoint.user(),
            endpoint.password(),
            &control_id,
            &timestamp,
        );
        let result = conn.exchange(&query).await;
        if conn.is_broken() {
            ctx.session.upstream = None;
            ctx.session.authenticated = false;
        }
        // a failed lookup must not leave the previous patient active
        ctx.session.patient = None;
        match result {
            Ok(response) if response.segment("PID").is_some() => {
                ctx.session.patient = Some(response);
                Reply::line(OK)
            }
            Ok(response) => {
                debug!(
                    "{}: no PID in response (MSA-1 {:?})",
                    ctx.session.id,
                    qbp::ack_code(&response)
                );
                let text = ctx.special(Special::NotPresent);
                ctx.fail(text)
            }
            Err(e) => {
                warn!("{}: patient query failed: {e}", ctx.session.id);
                let text = ctx.special(Special::NotPresent);
                ctx.fail(text)
            }
        }
    }

    fn get(&self, ctx: &mut Ctx<'_>, getter: Getter) -> Reply {
        let index = self.mapping.index(getter);
        let value = ctx
            .session
            .patient
            .as_ref()
            .and_then(|p| p.field_value("PID", index));
        match value {
            Some(v) => Reply::line(v),
            None => {
                let text = ctx.special(Special::NotPresent);
                ctx.fail(text)
            }
        }
    }
}

struct Ctx<'a> {
    registry: &'a LanguageRegistry,
    session: &'a mut Session,
}

impl Ctx<'_> {
    /// The session's pack, or the default pack before a language is chosen.
    fn pack(&self) -> Option<&LanguagePack> {
        self.session
            .language
            .as_deref()
            .and_then(|code| self.registry.get(code))
            .or_else(|| self.registry.default_pack())
    }

    fn special(&self, kind: Special) -> String {
        match self.pack() {
            Some(pack) => pack.special(kind).to_string(),
            None => match kind {
                Special::FilesNotFound => FALLBACK_FILES_NOT_FOUND,
                Special::None => FALLBACK_NONE,
                Special::NotPresent => FALLBACK_NOT_PRESENT,
            }
            .to_string(),
        }
    }

    fn last_error(&self) -> String {
        match &self.session.last_error {
            Some(e) => e.clone(),
            None => self.special(Special::None),
        }
    }

    fn fail(&mut self, text: String) -> Reply {
        self.session.last_error = Some(text);
        Reply::line(NOK)
    }

    fn fail_with(&mut self, failure: Failure) -> Reply {
        let text = failure.render(self.session.language.as_deref());
        self.fail(text)
    }
}

/// Renders `segment` as `Label: value` lines in field order.
///
/// Fields present but empty read as the pack's none-string; fields past the
/// end of the segment read as its not-present string. For MSH-9 the message
/// type and trigger event are also spelled out from the code tables. A pack
/// with no lexicon for the segment yields the files-not-found string alone.
pub fn interpret_segment(
    segment: &Hl7Segment,
    enc: &EncodingChars,
    pack: &LanguagePack,
) -> Vec<String> {
    let Some(lexicon) = pack.lexicon(segment.name()) else {
        return vec![pack.special(Special::FilesNotFound).to_string()];
    };
    lexicon
        .iter()
        .map(|(&index, label)| {
            let value = match segment.field(index) {
                None => pack.special(Special::NotPresent).to_string(),
                Some(field) => {
                    let v = field.value(enc);
                    if v.is_empty() {
                        pack.special(Special::None).to_string()
                    } else if segment.name() == "MSH" && index == 9 {
                        describe_message_type(&v, field, pack)
                    } else {
                        v
                    }
                }
            };
            format!("{label}: {value}")
        })
        .collect()
}

fn describe_message_type(value: &str, field: &crate::hl7::Field, pack: &LanguagePack) -> String {
    let rep = &field.repetitions()[0];
    let part = |i: usize| rep.get(i).and_then(|c| c.first()).map(String::as_str);
    let descriptions: Vec<&str> = [
        part(0).and_then(|c| pack.code_lookup(MSH_MESSAGE_TYPE, c)),
        part(1).and_then(|c| pack.code_lookup(MSH_EVENT_TYPE, c)),
    ]
    .into_iter()
    .flatten()
    .collect();
    if descriptions.is_empty() {
        value.to_string()
    } else {
        format!("{value} ({})", descriptions.join(" / "))
    }
}

/// Interprets every segment of `message`, in order.
pub fn interpret_message(message: &Hl7Message, pack: &LanguagePack) -> Vec<String> {
    message
        .segments()
        .iter()
        .flat_map(|s| interpret_segment(s, message.encoding(), pack))
        .collect()
}
