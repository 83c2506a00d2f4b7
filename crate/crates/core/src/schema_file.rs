//! Text format for event-type and tracing-state declarations.
//!
//! ```text
//! # comment
//! type Access_order { location:string, ordering:string=deny\,allow }
//! type Access_allow_v2 : Access_allow { vhost:string="" }
//! state access { Access_order, Access_allow, Access_request }
//! ```
//!
//! One declaration per line. A default runs to the next unescaped `,` or the
//! closing brace and is trimmed; wrap it in double quotes to keep spaces or
//! use `\"`, `\\` and `\,`.

use thiserror::Error;

use crate::runtime::TracingState;
use crate::schema::{is_identifier, EventType, Kind, PropertySpec, SchemaError, SchemaRegistry};

#[derive(Debug, Error)]
pub enum SchemaFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Schema { line: usize, source: SchemaError },
}

#[derive(Debug, Clone)]
pub struct SchemaFile {
    pub registry: SchemaRegistry,
    pub states: Vec<TracingState>,
}

impl SchemaFile {
    pub fn state(&self, name: &str) -> Option<&TracingState> {
        self.states.iter().find(|s| s.name == name)
    }
}

/// Parses declarations on top of `base`, which usually holds the built-ins.
pub fn parse_schema(text: &str, base: SchemaRegistry) -> Result<SchemaFile, SchemaFileError> {
    let mut registry = base;
    let mut states = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let syntax = |msg: String| SchemaFileError::Syntax { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (keyword, rest) = trimmed
            .split_once(char::is_whitespace)
            .ok_or_else(|| syntax(format!("incomplete declaration {trimmed:?}")))?;
        let open = rest.find('{').ok_or_else(|| syntax("missing `{`".into()))?;
        let body = rest[open + 1..]
            .trim_end()
            .strip_suffix('}')
            .ok_or_else(|| syntax("declaration must end with `}`".into()))?;
        let head = rest[..open].trim();
        match keyword {
            "type" => {
                let (name, parent) = match head.split_once(':') {
                    Some((n, p)) => (n.trim(), Some(p.trim())),
                    None => (head, None),
                };
                let mut ty = EventType::new(name);
                if let Some(p) = parent {
                    ty = ty.extends(p);
                }
                for entry in split_entries(body).map_err(syntax)? {
                    ty = ty.property(parse_property(&entry).map_err(syntax)?);
                }
                registry
                    .register(ty)
                    .map_err(|source| SchemaFileError::Schema { line, source })?;
            }
            "state" => {
                if !is_identifier(head) {
                    return Err(syntax(format!("bad state name {head:?}")));
                }
                let types: Vec<String> = split_entries(body)
                    .map_err(syntax)?
                    .into_iter()
                    .map(|t| t.trim().to_owned())
                    .collect();
                let state = TracingState::new(head, types);
                if let Some(ty) = state.enabled_types.iter().find(|t| !registry.contains(t)) {
                    return Err(syntax(format!("state {head} names unknown type {ty}")));
                }
                states.push(state);
            }
            other => return Err(syntax(format!("unknown declaration {other:?}"))),
        }
    }
    Ok(SchemaFile { registry, states })
}

/// Splits a brace body on commas outside quotes and escapes. Empty body
/// yields no entries.
fn split_entries(body: &str) -> Result<Vec<String>, String> {
    let mut entries = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                current.push(c);
                current.push(chars.next().ok_or("dangling backslash")?);
            }
            '"' => {
                quoted = !quoted;
                current.push(c);
            }
            ',' if !quoted => entries.push(std::mem::take(&mut current)),
            c => current.push(c),
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    entries.push(current);
    if entries.len() == 1 && entries[0].trim().is_empty() {
        return Ok(Vec::new());
    }
    if entries.iter().any(|e| e.trim().is_empty()) {
        return Err("empty entry".into());
    }
    Ok(entries)
}

fn parse_property(entry: &str) -> Result<PropertySpec, String> {
    let (name, rest) = entry
        .split_once(':')
        .ok_or_else(|| format!("property {:?} lacks `:kind`", entry.trim()))?;
    let (kind_text, default) = match rest.split_once('=') {
        Some((k, d)) => (k, Some(d)),
        None => (rest, None),
    };
    let kind = Kind::parse(kind_text.trim())
        .ok_or_else(|| format!("unknown kind {:?}", kind_text.trim()))?;
    let mut spec = PropertySpec::new(name.trim(), kind);
    if let Some(d) = default {
        let text = unquote(d.trim())?;
        let value = kind
            .parse_value(&text)
            .ok_or_else(|| format!("default {text:?} is not a {kind}"))?;
        spec.default = Some(value);
    }
    Ok(spec)
}

fn unquote(text: &str) -> Result<String, String> {
    let inner = match text.strip_prefix('"') {
        Some(rest) => rest.strip_suffix('"').ok_or("unterminated quote")?,
        None => text,
    };
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            out.push(chars.next().ok_or("dangling backslash")?);
        } else {
            out.push(c);
        }
    }
    Ok(out)
}
