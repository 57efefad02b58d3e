//! HL7 v2 messages in ER7 (pipe-delimited) encoding.
//!
//! A message is an ordered list of segments. Each segment holds fields
//! addressed from 1, each field a list of repetitions, each repetition a list
//! of components, each component a list of subcomponent strings. Values are
//! stored decoded; separator bytes inside values are escaped on output.
//!
//! ```
//! use hl7_portal::hl7::Hl7Message;
//!
//! let msg = Hl7Message::parse(b"MSH|^~\\&|APP|FAC\rPID|1||||C. Marius").unwrap();
//! assert_eq!(msg.field_value("PID", 5).as_deref(), Some("C. Marius"));
//! assert_eq!(msg.field_value("PID", 6), None);
//! ```

use std::fmt;

use thiserror::Error;

use crate::text::decode_bytes;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Hl7Error {
    #[error("empty message")]
    EmptyMessage,
    #[error("malformed segment on line {line}: {reason}")]
    MalformedSegment { line: usize, reason: String },
    #[error("invalid encoding characters: {0}")]
    InvalidEncoding(String),
}

/// The five ER7 delimiter bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodingChars {
    field: u8,
    component: u8,
    repetition: u8,
    escape: u8,
    subcomponent: u8,
}

impl Default for EncodingChars {
    fn default() -> Self {
        Self {
            field: b'|',
            component: b'^',
            repetition: b'~',
            escape: b'\\',
            subcomponent: b'&',
        }
    }
}

impl EncodingChars {
    pub fn new(
        field: u8,
        component: u8,
        repetition: u8,
        escape: u8,
        subcomponent: u8,
    ) -> Result<Self, Hl7Error> {
        let all = [field, component, repetition, escape, subcomponent];
        for (i, b) in all.iter().enumerate() {
            if !b.is_ascii_graphic() {
                return Err(Hl7Error::InvalidEncoding(format!(
                    "delimiter 0x{b:02X} is not printable ASCII"
                )));
            }
            if b.is_ascii_alphanumeric() {
                return Err(Hl7Error::InvalidEncoding(format!(
                    "delimiter '{}' is alphanumeric",
                    *b as char
                )));
            }
            if all[..i].contains(b) {
                return Err(Hl7Error::InvalidEncoding(format!(
                    "delimiter '{}' used twice",
                    *b as char
                )));
            }
        }
        Ok(Self {
            field,
            component,
            repetition,
            escape,
            subcomponent,
        })
    }

    /// Reads the delimiters from an MSH header line (`MSH|^~\&|...`).
    /// Missing trailing encoding characters fall back to the defaults.
    fn from_msh_line(line: &str) -> Result<Self, Hl7Error> {
        let bytes = line.as_bytes();
        let default = Self::default();
        let Some(&field) = bytes.get(3) else {
            return Ok(default);
        };
        let rest = &bytes[4..];
        let enc: Vec<u8> = rest.iter().copied().take_while(|&b| b != field).collect();
        let pick = |i: usize, d: u8| enc.get(i).copied().unwrap_or(d);
        Self::new(
            field,
            pick(0, default.component),
            pick(1, default.repetition),
            pick(2, default.escape),
            pick(3, default.subcomponent),
        )
    }

    pub fn field(&self) -> char {
        self.field as char
    }
    pub fn component(&self) -> char {
        self.component as char
    }
    pub fn repetition(&self) -> char {
        self.repetition as char
    }
    pub fn escape(&self) -> char {
        self.escape as char
    }
    pub fn subcomponent(&self) -> char {
        self.subcomponent as char
    }

    /// Contents of MSH-2: component, repetition, escape and subcomponent
    /// characters, in that order.
    pub fn msh2(&self) -> String {
        [
            self.component,
            self.repetition,
            self.escape,
            self.subcomponent,
        ]
        .iter()
        .map(|&b| b as char)
        .collect()
    }

    fn escape_value(&self, value: &str, out: &mut String) {
        let esc = self.escape();
        for c in value.chars() {
            let code = match c {
                c if c == self.field() => Some("F"),
                c if c == self.component() => Some("S"),
                c if c == self.repetition() => Some("R"),
                c if c == esc => Some("E"),
                c if c == self.subcomponent() => Some("T"),
                '\r' => Some("X0D"),
                '\n' => Some("X0A"),
                _ => None,
            };
            match code {
                Some(code) => {
                    out.push(esc);
                    out.push_str(code);
                    out.push(esc);
                }
                None => out.push(c),
            }
        }
    }

    fn unescape_value(&self, raw: &str) -> String {
        let esc = self.escape();
        if !raw.contains(esc) {
            return raw.to_string();
        }
        let mut out = String::with_capacity(raw.len());
        let mut rest = raw;
        while let Some(start) = rest.find(esc) {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            let Some(end) = after.find(esc) else {
                // unterminated: keep the remainder as-is
                out.push_str(&rest[start..]);
                return out;
            };
            let code = &after[..end];
            match self.decode_escape(code) {
                Some(decoded) => out.push_str(&decoded),
                None => {
                    out.push(esc);
                    out.push_str(code);
                    out.push(esc);
                }
            }
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        out
    }

    fn decode_escape(&self, code: &str) -> Option<String> {
        match code {
            "F" => Some(self.field().to_string()),
            "S" => Some(self.component().to_string()),
            "R" => Some(self.repetition().to_string()),
            "E" => Some(self.escape().to_string()),
            "T" => Some(self.subcomponent().to_string()),
            _ => {
                // \Xhh..\ restricted to 7-bit bytes
                let hex = code.strip_prefix('X')?;
                if hex.is_empty() || hex.len() % 2 != 0 {
                    return None;
                }
                (0..hex.len())
                    .step_by(2)
                    .map(|i| {
                        u8::from_str_radix(hex.get(i..i + 2)?, 16)
                            .ok()
                            .filter(u8::is_ascii)
                            .map(char::from)
                    })
                    .collect()
            }
        }
    }
}

/// One field: repetitions of components of subcomponents.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Field {
    repetitions: Vec<Vec<Vec<String>>>,
}

impl Field {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A field with one repetition holding a single plain value.
    pub fn text(value: impl Into<String>) -> Self {
        let value = value.into();
        if value.is_empty() {
            return Self::empty();
        }
        Self {
            repetitions: vec![vec![vec![value]]],
        }
    }

    pub fn from_repetitions(repetitions: Vec<Vec<Vec<String>>>) -> Self {
        Self { repetitions }
    }

    pub fn repetitions(&self) -> &[Vec<Vec<String>>] {
        &self.repetitions
    }

    /// True when the field serializes to nothing.
    pub fn is_empty(&self) -> bool {
        match self.repetitions.as_slice() {
            [] => true,
            [rep] => {
                matches!(rep.as_slice(), [comp] if matches!(comp.as_slice(), [s] if s.is_empty()))
            }
            _ => false,
        }
    }

    /// First repetition with components and subcomponents re-joined.
    pub fn value(&self, enc: &EncodingChars) -> String {
        let Some(rep) = self.repetitions.first() else {
            return String::new();
        };
        let comp_sep = enc.component().to_string();
        let sub_sep = enc.subcomponent().to_string();
        rep.iter()
            .map(|comp| comp.join(&sub_sep))
            .collect::<Vec<_>>()
            .join(&comp_sep)
    }

    fn parse(raw: &str, enc: &EncodingChars) -> Self {
        if raw.is_empty() {
            return Self::empty();
        }
        let repetitions = raw
            .split(enc.repetition())
            .map(|rep| {
                rep.split(enc.component())
                    .map(|comp| {
                        comp.split(enc.subcomponent())
                            .map(|sub| enc.unescape_value(sub))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { repetitions }
    }

    fn write(&self, enc: &EncodingChars, out: &mut String) {
        for (r, rep) in self.repetitions.iter().enumerate() {
            if r > 0 {
                out.push(enc.repetition());
            }
            for (c, comp) in rep.iter().enumerate() {
                if c > 0 {
                    out.push(enc.component());
                }
                for (s, sub) in comp.iter().enumerate() {
                    if s > 0 {
                        out.push(enc.subcomponent());
                    }
                    enc.escape_value(sub, out);
                }
            }
        }
    }

    fn literal(&self) -> &str {
        self.repetitions
            .first()
            .and_then(|r| r.first())
            .and_then(|c| c.first())
            .map(String::as_str)
            .unwrap_or("")
    }
}

/// A named segment. `fields[0]` is field 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hl7Segment {
    name: String,
    fields: Vec<Field>,
}

fn valid_segment_name(name: &str) -> bool {
    let b = name.as_bytes();
    b.len() == 3
        && b[0].is_ascii_uppercase()
        && b[1..]
            .iter()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
}

impl Hl7Segment {
    pub fn new(name: &str, fields: Vec<Field>) -> Result<Self, Hl7Error> {
        if !valid_segment_name(name) {
            return Err(Hl7Error::MalformedSegment {
                line: 1,
                reason: format!("invalid segment name {name:?}"),
            });
        }
        Ok(Self {
            name: name.to_string(),
            fields,
        })
    }

    /// Builds an MSH header whose fields 1 and 2 carry `enc`; `rest` starts at MSH-3.
    pub fn msh(enc: &EncodingChars, rest: Vec<Field>) -> Self {
        let mut fields = vec![
            Field::text(enc.field().to_string()),
            Field::text(enc.msh2()),
        ];
        fields.extend(rest);
        Self {
            name: "MSH".to_string(),
            fields,
        }
    }

    /// Parses one segment line. `line` numbers error reports.
    pub fn parse(raw: &str, enc: &EncodingChars) -> Result<Self, Hl7Error> {
        Self::parse_line(raw, enc, 1)
    }

    fn parse_line(raw: &str, enc: &EncodingChars, line: usize) -> Result<Self, Hl7Error> {
        let malformed = |reason: String| Hl7Error::MalformedSegment { line, reason };
        if raw.contains(['\r', '\n']) {
            return Err(malformed("segment contains a line terminator".into()));
        }
        let name_end = raw.find(enc.field()).unwrap_or(raw.len());
        let name = &raw[..name_end];
        if !valid_segment_name(name) {
            return Err(malformed(format!("invalid segment name {name:?}")));
        }
        if name_end == raw.len() {
            return Ok(Self {
                name: name.to_string(),
                fields: Vec::new(),
            });
        }
        let body = &raw[name_end + 1..];
        let mut fields = Vec::new();
        let mut tokens = body.split(enc.field());
        if name == "MSH" {
            fields.push(Field::text(enc.field().to_string()));
            if let Some(msh2) = tokens.next() {
                fields.push(Field::text(msh2));
            }
        }
        fields.extend(tokens.map(|t| Field::parse(t, enc)));
        Ok(Self {
            name: name.to_string(),
            fields,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// Field at a 1-based index. `None` for index 0 or past the last field.
    pub fn field(&self, index: usize) -> Option<&Field> {
        index.checked_sub(1).and_then(|i| self.fields.get(i))
    }

    /// Index of the last field present (0 when there are none).
    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn set_field(&mut self, index: usize, field: Field) {
        assert!(index >= 1, "HL7 field indices start at 1");
        if self.fields.len() < index {
            self.fields.resize(index, Field::empty());
        }
        self.fields[index - 1] = field;
    }

    /// Non-empty joined value at `index`.
    pub fn value(&self, index: usize, enc: &EncodingChars) -> Option<String> {
        self.field(index)
            .map(|f| f.value(enc))
            .filter(|v| !v.is_empty())
    }

    /// Writes the segment without its terminator, dropping trailing empty fields.
    pub fn to_er7(&self, enc: &EncodingChars) -> String {
        let mut out = self.name.clone();
        let is_msh = self.name == "MSH";
        let keep = self
            .fields
            .iter()
            .rposition(|f| !f.is_empty())
            .map_or(0, |i| i + 1);
        for (i, field) in self.fields[..keep].iter().enumerate() {
            match (is_msh, i) {
                // MSH-1 is the separator itself
                (true, 0) => continue,
                (true, 1) => {
                    out.push(enc.field());
                    out.push_str(field.literal());
                }
                _ => {
                    out.push(enc.field());
                    field.write(enc, &mut out);
                }
            }
        }
        if is_msh && keep == 1 {
            out.push(enc.field());
        }
        out
    }

    fn normalized(&self) -> Self {
        let keep = self
            .fields
            .iter()
            .rposition(|f| !f.is_empty())
            .map_or(0, |i| i + 1);
        let fields = self.fields[..keep]
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Field::empty()
                } else {
                    f.clone()
                }
            })
            .collect();
        Self {
            name: self.name.clone(),
            fields,
        }
    }
}

impl fmt::Display for Hl7Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_er7(&EncodingChars::default()))
    }
}

/// A parsed message: delimiters plus a non-empty segment list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hl7Message {
    encoding: EncodingChars,
    segments: Vec<Hl7Segment>,
}

impl Hl7Message {
    pub fn new(encoding: EncodingChars, segments: Vec<Hl7Segment>) -> Result<Self, Hl7Error> {
        if segments.is_empty() {
            return Err(Hl7Error::EmptyMessage);
        }
        Ok(Self { encoding, segments })
    }

    /// Parses CR-, LF- or CRLF-separated segment lines. When the first line is
    /// an MSH header its delimiters apply to every line; otherwise the
    /// defaults are used.
    pub fn parse(raw: &[u8]) -> Result<Self, Hl7Error> {
        let text = decode_bytes(raw);
        let mut lines = text
            .split(['\r', '\n'])
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .peekable();
        let Some(&(_, first)) = lines.peek() else {
            return Err(Hl7Error::EmptyMessage);
        };
        let encoding = if first.starts_with("MSH") && first.len() > 3 {
            EncodingChars::from_msh_line(first)?
        } else {
            EncodingChars::default()
        };
        let segments = lines
            .map(|(i, line)| Hl7Segment::parse_line(line, &encoding, i + 1))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { encoding, segments })
    }

    /// CR-terminated segment lines.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_er7().into_bytes()
    }

    pub fn to_er7(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&seg.to_er7(&self.encoding));
            out.push('\r');
        }
        out
    }

    pub fn encoding(&self) -> &EncodingChars {
        &self.encoding
    }

    pub fn segments(&self) -> &[Hl7Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Hl7Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Value of `segment`-`index` in the first matching segment, or `None`
    /// when the segment or field is absent or the value is empty.
    pub fn field_value(&self, segment: &str, index: usize) -> Option<String> {
        self.segment(segment)?.value(index, &self.encoding)
    }

    /// Copy with trailing empty fields dropped and empty fields in canonical form.
    pub fn normalized(&self) -> Self {
        Self {
            encoding: self.encoding,
            segments: self.segments.iter().map(Hl7Segment::normalized).collect(),
        }
    }
}
