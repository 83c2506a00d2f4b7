//! Loading and saving traces, predicate queries and summary reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::codec::{self, MalformedRecord};
use crate::events::ACCESS_REQUEST;
use crate::glob::glob_match;
use crate::schema::{is_identifier, Event, Kind, SchemaError, SchemaRegistry, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub epoch: String,
    pub events: Vec<Event>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("reading trace: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        source: MalformedRecord,
    },
    #[error("line {line}: expected seq {expected}, found {found}")]
    SeqGap {
        line: usize,
        expected: u64,
        found: u64,
    },
    #[error("line {line}: timestamp {found} precedes {previous}")]
    TimestampRegression {
        line: usize,
        previous: u64,
        found: u64,
    },
    #[error("line {line}: {}", join_errors(.errors))]
    SchemaViolation {
        line: usize,
        errors: Vec<SchemaError>,
    },
}

fn join_errors(errors: &[SchemaError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl LoadError {
    pub fn line(&self) -> Option<usize> {
        match self {
            LoadError::Io(_) => None,
            LoadError::Malformed { line, .. }
            | LoadError::SeqGap { line, .. }
            | LoadError::TimestampRegression { line, .. }
            | LoadError::SchemaViolation { line, .. } => Some(*line),
        }
    }
}

/// Decodes and checks a whole trace: header, records, schema conformance,
/// gap-free seq from 1 and non-decreasing timestamps.
pub fn parse_trace(text: &str, registry: &SchemaRegistry) -> Result<Trace, LoadError> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or_default();
    let epoch = codec::parse_header(header.strip_suffix('\n').unwrap_or(header))
        .map_err(|source| LoadError::Malformed { line: 1, source })?;
    let mut events = Vec::new();
    let mut last_ts = 0;
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        let event = codec::decode_record(raw, registry)
            .map_err(|source| LoadError::Malformed { line, source })?;
        let expected = events.len() as u64 + 1;
        if event.seq != expected {
            return Err(LoadError::SeqGap {
                line,
                expected,
                found: event.seq,
            });
        }
        if event.timestamp < last_ts {
            return Err(LoadError::TimestampRegression {
                line,
                previous: last_ts,
                found: event.timestamp,
            });
        }
        registry
            .validate_event(&event)
            .map_err(|errors| LoadError::SchemaViolation { line, errors })?;
        last_ts = event.timestamp;
        events.push(event);
    }
    Ok(Trace { epoch, events })
}

pub fn load_trace(mut input: impl Read, registry: &SchemaRegistry) -> Result<Trace, LoadError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    parse_trace(&text, registry)
}

pub fn load_trace_file(path: &Path, registry: &SchemaRegistry) -> Result<Trace, LoadError> {
    load_trace(std::fs::File::open(path)?, registry)
}

impl Trace {
    pub fn to_text(&self) -> String {
        let mut out = codec::header_line(&self.epoch);
        for event in &self.events {
            out.push_str(&codec::encode_event(event));
        }
        out
    }

    pub fn save(&self, mut out: impl Write) -> io::Result<()> {
        out.write_all(self.to_text().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Glob,
}

impl Op {
    // longest spellings first so `<=` is not read as `<`
    const SPELLINGS: [(&'static str, Op); 11] = [
        ("glob", Op::Glob),
        ("!=", Op::Ne),
        ("<=", Op::Le),
        (">=", Op::Ge),
        ("≠", Op::Ne),
        ("≤", Op::Le),
        ("≥", Op::Ge),
        ("=", Op::Eq),
        ("<", Op::Lt),
        (">", Op::Gt),
        ("~", Op::Glob),
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Glob => "glob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub property: String,
    pub op: Op,
    pub literal: String,
}

impl Predicate {
    pub fn new(property: &str, op: Op, literal: impl Into<String>) -> Self {
        Predicate {
            property: property.to_owned(),
            op,
            literal: literal.into(),
        }
    }

    /// Parses `prop OP literal`; the literal is the trimmed remainder.
    pub fn parse(text: &str) -> Result<Predicate, QueryError> {
        let bad = || QueryError::BadPredicate(text.to_owned());
        let text_t = text.trim_start();
        let end = text_t
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(text_t.len());
        let property = &text_t[..end];
        if !is_identifier(property) {
            return Err(bad());
        }
        let rest = text_t[end..].trim_start();
        let (spelling, op) = Op::SPELLINGS
            .iter()
            .find(|(s, _)| rest.starts_with(s))
            .ok_or_else(bad)?;
        if *spelling == "glob" && !rest[4..].starts_with(char::is_whitespace) {
            return Err(bad());
        }
        Ok(Predicate::new(property, *op, rest[spelling.len()..].trim()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Query {
    pub types: Option<BTreeSet<String>>,
    pub predicates: Vec<Predicate>,
    pub time_range: Option<(u64, u64)>,
}

impl Query {
    pub fn new() -> Self {
        Query::default()
    }

    pub fn of_type(mut self, ty: &str) -> Self {
        self.types
            .get_or_insert_with(BTreeSet::new)
            .insert(ty.to_owned());
        self
    }

    pub fn filter(mut self, predicate: Predicate) -> Self {
        self.predicates.push(predicate);
        self
    }

    pub fn between(mut self, from: u64, to: u64) -> Self {
        self.time_range = Some((from, to));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("cannot parse predicate {0:?}; expected `prop OP literal`")]
    BadPredicate(String),
    #[error("unknown event type {0} in query")]
    UnknownType(String),
    #[error("no queried event type has property {0}")]
    UnknownPropertyInPredicate(String),
    #[error("{property} is a {kind}; literal {literal:?} does not compare with it")]
    KindMismatch {
        property: String,
        kind: Kind,
        literal: String,
    },
    #[error("glob needs a string property; {property} is a {kind}")]
    GlobOnNonString { property: String, kind: Kind },
}

/// A predicate with its literal typed once per property kind it may meet.
struct Compiled<'q> {
    pred: &'q Predicate,
    literals: BTreeMap<Kind, Value>,
}

fn compile<'q>(
    query: &'q Query,
    registry: &SchemaRegistry,
) -> Result<Vec<Compiled<'q>>, QueryError> {
    let candidates: Vec<&str> = match &query.types {
        Some(types) => {
            for t in types {
                if !registry.contains(t) {
                    return Err(QueryError::UnknownType(t.clone()));
                }
            }
            types.iter().map(String::as_str).collect()
        }
        None => registry.type_names().collect(),
    };
    query
        .predicates
        .iter()
        .map(|pred| {
            let kinds: BTreeSet<Kind> = candidates
                .iter()
                .filter_map(|t| registry.property_kind(t, &pred.property))
                .collect();
            if kinds.is_empty() {
                return Err(QueryError::UnknownPropertyInPredicate(
                    pred.property.clone(),
                ));
            }
            let mut literals = BTreeMap::new();
            for kind in kinds {
                if pred.op == Op::Glob && kind != Kind::String {
                    return Err(QueryError::GlobOnNonString {
                        property: pred.property.clone(),
                        kind,
                    });
                }
                let value =
                    kind.parse_value(&pred.literal)
                        .ok_or_else(|| QueryError::KindMismatch {
                            property: pred.property.clone(),
                            kind,
                            literal: pred.literal.clone(),
                        })?;
                literals.insert(kind, value);
            }
            Ok(Compiled { pred, literals })
        })
        .collect()
}

fn compare(value: &Value, literal: &Value) -> Option<std::cmp::Ordering> {
    match (value, literal) {
        (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
        (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
        (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
        (Value::Timestamp(a), Value::Timestamp(b)) => Some(a.cmp(b)),
        _ => None,
    }
}

impl Compiled<'_> {
    fn holds(&self, event: &Event) -> bool {
        let Some(value) = event.lookup(&self.pred.property) else {
            return false;
        };
        let Some(literal) = self.literals.get(&value.kind()) else {
            return false;
        };
        if self.pred.op == Op::Glob {
            return match (&value, literal) {
                (Value::Str(v), Value::Str(p)) => glob_match(p, v),
                _ => false,
            };
        }
        let Some(ord) = compare(&value, literal) else {
            return false;
        };
        use std::cmp::Ordering::*;
        match self.pred.op {
            Op::Eq => ord == Equal,
            Op::Ne => ord != Equal,
            Op::Lt => ord == Less,
            Op::Le => ord != Greater,
            Op::Gt => ord == Greater,
            Op::Ge => ord != Less,
            Op::Glob => unreachable!(),
        }
    }
}

/// Events satisfying the type filter, every predicate and the inclusive
/// time range, in seq order.
pub fn run_query<'t>(
    trace: &'t Trace,
    query: &Query,
    registry: &SchemaRegistry,
) -> Result<Vec<&'t Event>, QueryError> {
    let compiled = compile(query, registry)?;
    Ok(trace
        .events
        .iter()
        .filter(|e| {
            query
                .types
                .as_ref()
                .is_none_or(|t| t.contains(&e.type_name))
        })
        .filter(|e| {
            query
                .time_range
                .is_none_or(|(from, to)| (from..=to).contains(&e.timestamp))
        })
        .filter(|e| compiled.iter().all(|c| c.holds(e)))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub total_events: u64,
    pub per_type: BTreeMap<String, u64>,
    pub requests: u64,
    pub per_location: BTreeMap<String, u64>,
    pub granted: u64,
    pub denied: u64,
    pub first_timestamp: Option<u64>,
    pub last_timestamp: Option<u64>,
}

pub fn summarize(trace: &Trace) -> Report {
    let mut report = Report {
        first_timestamp: trace.events.first().map(|e| e.timestamp),
        last_timestamp: trace.events.last().map(|e| e.timestamp),
        ..Report::default()
    };
    for event in &trace.events {
        report.total_events += 1;
        *report.per_type.entry(event.type_name.clone()).or_default() += 1;
        if event.type_name == ACCESS_REQUEST {
            report.requests += 1;
            if let Some(location) = event.get_str("location") {
                *report.per_location.entry(location.to_owned()).or_default() += 1;
            }
            match event.get_int("access_code") {
                Some(0) => report.granted += 1,
                Some(_) => report.denied += 1,
                None => {}
            }
        }
    }
    report
}

impl Report {
    /// Human-readable table with aligned columns.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<(String, String)> =
            vec![("events".into(), self.total_events.to_string())];
        for (ty, n) in &self.per_type {
            rows.push((format!("  {ty}"), n.to_string()));
        }
        rows.push(("requests".into(), self.requests.to_string()));
        rows.push(("  granted".into(), self.granted.to_string()));
        rows.push(("  denied".into(), self.denied.to_string()));
        for (loc, n) in &self.per_location {
            rows.push((format!("  at {loc}"), n.to_string()));
        }
        let ts = |t: Option<u64>| t.map_or("-".to_owned(), |t| t.to_string());
        rows.push(("first timestamp".into(), ts(self.first_timestamp)));
        rows.push(("last timestamp".into(), ts(self.last_timestamp)));
        let width = rows
            .iter()
            .map(|(k, _)| k.chars().count())
            .max()
            .unwrap_or(0);
        let vwidth = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>vwidth$}");
        }
        out
    }

    /// One `key=value` line per figure.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "events={}", self.total_events);
        for (ty, n) in &self.per_type {
            let _ = writeln!(out, "type.{ty}={n}");
        }
        let _ = writeln!(out, "requests={}", self.requests);
        let _ = writeln!(out, "granted={}", self.granted);
        let _ = writeln!(out, "denied={}", self.denied);
        for (loc, n) in &self.per_location {
            let _ = writeln!(out, "location.{loc}={n}");
        }
        if let Some(t) = self.first_timestamp {
            let _ = writeln!(out, "first_timestamp={t}");
        }
        if let Some(t) = self.last_timestamp {
            let _ = writeln!(out, "last_timestamp={t}");
        }
        out
    }
}
