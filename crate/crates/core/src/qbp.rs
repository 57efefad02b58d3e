//! The patient lookup exchanged with upstream servers: a QBP^Q22 query
//! carrying the CNP in QPD-3, answered by RSP^K22 with MSA, QAK, QPD and PID.

use crate::hl7::{EncodingChars, Field, Hl7Message, Hl7Segment};

pub const SENDING_APP: &str = "HL7PORTAL";
pub const SENDING_FACILITY: &str = "PORTAL";
const QUERY_NAME: [&str; 3] = ["Q22", "Find Candidates", "HL70471"];

fn components(parts: &[&str]) -> Field {
    Field::from_repetitions(vec![parts.iter().map(|p| vec![p.to_string()]).collect()])
}

/// MSH-8 carries `user:password`.
pub fn security_token(user: &str, password: &str) -> String {
    format!("{user}:{password}")
}

/// Builds the lookup query for `cnp`.
pub fn patient_query(
    cnp: &str,
    user: &str,
    password: &str,
    control_id: &str,
    timestamp: &str,
) -> Hl7Message {
    let enc = EncodingChars::default();
    let msh = Hl7Segment::msh(
        &enc,
        vec![
            Field::text(SENDING_APP),
            Field::text(SENDING_FACILITY),
            Field::empty(),
            Field::empty(),
            Field::text(timestamp),
            Field::text(security_token(user, password)),
            components(&["QBP", "Q22", "QBP_Q21"]),
            Field::text(control_id),
            Field::text("P"),
            Field::text("2.5"),
        ],
    );
    let qpd = Hl7Segment::new(
        "QPD",
        vec![
            components(&QUERY_NAME),
            Field::text(format!("Q{control_id}")),
            components(&["@PID.19", cnp]),
        ],
    )
    .expect("static segment name");
    let rcp = Hl7Segment::new("RCP", vec![Field::text("I"), components(&["1", "RD"])])
        .expect("static segment name");
    Hl7Message::new(enc, vec![msh, qpd, rcp]).expect("non-empty")
}

/// The CNP requested by a query: the last component of QPD-3's first
/// repetition (`@PID.19^<cnp>`), or its only component.
pub fn query_cnp(query: &Hl7Message) -> Option<String> {
    let field = query.segment("QPD")?.field(3)?;
    let rep = field.repetitions().first()?;
    let comp = if rep.len() >= 2 {
        &rep[1]
    } else {
        rep.first()?
    };
    let value = comp.join(&query.encoding().subcomponent().to_string());
    (!value.is_empty()).then_some(value)
}

/// MSH-8 of a query, if present.
pub fn query_security(query: &Hl7Message) -> Option<String> {
    query.field_value("MSH", 8)
}

/// Acknowledgment code in MSA-1 (`AA`, `AE`, `AR`).
pub fn ack_code(response: &Hl7Message) -> Option<String> {
    response.field_value("MSA", 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    Found,
    NotFound,
    Rejected,
}

/// Serialized RSP^K22 for `query`. For a hit, `pid_line` is appended
/// verbatim so the PID reaches the client byte-for-byte.
pub fn response_bytes(query: &Hl7Message, kind: ResponseKind, pid_line: Option<&str>) -> Vec<u8> {
    let enc = EncodingChars::default();
    let control_id = query.field_value("MSH", 10).unwrap_or_default();
    let timestamp = query.field_value("MSH", 7).unwrap_or_default();
    let tag = query
        .segment("QPD")
        .and_then(|q| q.value(2, query.encoding()))
        .unwrap_or_default();

    let msh = Hl7Segment::msh(
        &enc,
        vec![
            Field::text("MOCKHL7"),
            Field::text("MOCK"),
            Field::text(SENDING_APP),
            Field::text(SENDING_FACILITY),
            Field::text(timestamp),
            Field::empty(),
            components(&["RSP", "K22", "RSP_K21"]),
            Field::text(format!("R{control_id}")),
            Field::text("P"),
            Field::text("2.5"),
        ],
    );
    let (ack, status, text) = match kind {
        ResponseKind::Found => ("AA", "OK", ""),
        ResponseKind::NotFound => ("AE", "NF", "No data found"),
        ResponseKind::Rejected => ("AR", "AR", "Authentication failed"),
    };
    let msa = Hl7Segment::new(
        "MSA",
        vec![Field::text(ack), Field::text(control_id), Field::text(text)],
    )
    .expect("static segment name");
    let hits = if kind == ResponseKind::Found {
        "1"
    } else {
        "0"
    };
    let qak = Hl7Segment::new(
        "QAK",
        vec![
            Field::text(tag),
            Field::text(status),
            components(&QUERY_NAME),
            Field::text(hits),
        ],
    )
    .expect("static segment name");

    let mut segments = vec![msh, msa, qak];
    if let Some(qpd) = query.segment("QPD") {
        segments.push(qpd.clone());
    }
    let mut out = Hl7Message::new(enc, segments).expect("non-empty").to_er7();
    if let (ResponseKind::Found, Some(pid)) = (kind, pid_line) {
        out.push_str(pid);
        out.push('\r');
    }
    out.into_bytes()
}
