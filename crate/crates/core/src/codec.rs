//! Line-oriented trace encoding shared by the file and socket sinks.
//!
//! ```text
//! thirdeye-trace v1 epoch=2026-10-16T09:00:00Z
//! 1\t1000\tAccess_order\tconfig\tlocation=/private;ordering=allow,deny
//! ```
//!
//! Each record is `seq`, `timestamp_ns`, type name, source location and the
//! property list, separated by tabs and terminated by LF. Properties are
//! `key=value` joined by `;`, in the schema's resolved order. Inside values
//! and the source location, `\\`, `\;`, `\=`, `\t`, `\n` and `\r` are the only
//! escapes, and the escaped characters never appear raw.

use thiserror::Error;

use crate::schema::{is_identifier, Event, SchemaRegistry};

pub const HEADER_PREFIX: &str = "thirdeye-trace v1 epoch=";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed record: {0}")]
pub struct MalformedRecord(pub String);

fn malformed(msg: impl Into<String>) -> MalformedRecord {
    MalformedRecord(msg.into())
}

pub fn header_line(epoch: &str) -> String {
    format!("{HEADER_PREFIX}{epoch}\n")
}

/// Extracts the epoch from a header line (without its newline).
pub fn parse_header(line: &str) -> Result<String, MalformedRecord> {
    let epoch = line
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| malformed("missing `thirdeye-trace v1` header"))?;
    chrono::DateTime::parse_from_rfc3339(epoch)
        .map_err(|e| malformed(format!("bad header epoch {epoch:?}: {e}")))?;
    Ok(epoch.to_owned())
}

pub fn escape_into(out: &mut String, text: &str) {
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ';' => out.push_str("\\;"),
            '=' => out.push_str("\\="),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

pub fn unescape(text: &str) -> Result<String, MalformedRecord> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('\\') => out.push('\\'),
                Some(';') => out.push(';'),
                Some('=') => out.push('='),
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(other) => return Err(malformed(format!("bad escape \\{other}"))),
                None => return Err(malformed("dangling backslash")),
            },
            ';' | '=' | '\t' | '\n' | '\r' => {
                return Err(malformed(format!("unescaped {c:?} in value")))
            }
            c => out.push(c),
        }
    }
    Ok(out)
}

/// Encodes one event as a complete record, trailing newline included.
pub fn encode_event(event: &Event) -> String {
    let mut out = format!("{}\t{}\t{}\t", event.seq, event.timestamp, event.type_name);
    escape_into(&mut out, &event.source_location);
    out.push('\t');
    for (i, (key, value)) in event.properties.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(key);
        out.push('=');
        escape_into(&mut out, &value.to_string());
    }
    out.push('\n');
    out
}

/// Splits on separators that are not preceded by an escaping backslash.
fn split_unescaped(text: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&text[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&text[start..]);
    parts
}

fn parse_u64(field: &str, what: &str) -> Result<u64, MalformedRecord> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(format!(
            "{what} {field:?} is not an unsigned integer"
        )));
    }
    field
        .parse()
        .map_err(|_| malformed(format!("{what} {field:?} out of range")))
}

/// Decodes one record. A trailing LF is accepted; anything else that
/// deviates from the grammar is rejected. Values are typed through
/// `registry`.
pub fn decode_record(line: &str, registry: &SchemaRegistry) -> Result<Event, MalformedRecord> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(malformed(format!(
            "expected 5 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let seq = parse_u64(fields[0], "seq")?;
    let timestamp = parse_u64(fields[1], "timestamp")?;
    let type_name = fields[2];
    if !is_identifier(type_name) {
        return Err(malformed(format!("bad type name {type_name:?}")));
    }
    let specs = registry
        .explicit_properties(type_name)
        .map_err(|_| malformed(format!("unknown event type {type_name}")))?;
    let source_location = unescape(fields[3])?;

    let mut properties = indexmap::IndexMap::new();
    let mut next_slot = 0;
    if !fields[4].is_empty() {
        for pair in split_unescaped(fields[4], ';') {
            let kv = split_unescaped(pair, '=');
            let [key, raw] = kv[..] else {
                return Err(malformed(format!("bad property pair {pair:?}")));
            };
            let slot = specs[next_slot..]
                .iter()
                .position(|s| s.name == key)
                .map(|p| p + next_slot)
                .ok_or_else(|| {
                    if specs.iter().any(|s| s.name == key) {
                        malformed(format!("property {key} out of order or repeated"))
                    } else {
                        malformed(format!("{type_name} has no property {key:?}"))
                    }
                })?;
            next_slot = slot + 1;
            let spec = &specs[slot];
            let text = unescape(raw)?;
            let value = spec
                .kind
                .parse_value(&text)
                .ok_or_else(|| malformed(format!("{key}={text:?} is not a valid {}", spec.kind)))?;
            properties.insert(key.to_owned(), value);
        }
    }

    Ok(Event {
        type_name: type_name.to_owned(),
        seq,
        timestamp,
        source_location,
        properties,
    })
}
