//! Trace replay against the access policy.
//!
//! For every `Access_request` the validator rebuilds the policy of the
//! request's location from the `Access_order` and `Access_allow` events that
//! strictly precede it, computes the expected decision and compares it with
//! the logged access code. Only the trace and a host map are consulted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::events::{request_client, ACCESS_ALLOW, ACCESS_ORDER, ACCESS_REQUEST};
use crate::policy::{
    decide, Access, Decision, DirectiveKind, HostPattern, Ordering, PolicySnapshot, RequestHost,
    Rule, Stamp,
};
use crate::schema::Event;
use crate::store::Trace;

pub type HostMap = BTreeMap<String, Ipv4Addr>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("request seq {seq}: host {host} is not in the host map")]
    UnresolvableHost { seq: u64, host: String },
    #[error("request seq {seq}: {reason}")]
    MalformedRequestEvent { seq: u64, reason: String },
    #[error("config event seq {seq}: {reason}")]
    MalformedConfigEvent { seq: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("host map line {line}: {msg}")]
pub struct HostMapError {
    pub line: usize,
    pub msg: String,
}

/// Parses `hostname ip` lines; `#` starts a comment.
pub fn parse_host_map(text: &str) -> Result<HostMap, HostMapError> {
    let mut map = HostMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or_default().trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [name, ip] = fields[..] else {
            return Err(HostMapError {
                line,
                msg: format!("expected `hostname ip`, got {content:?}"),
            });
        };
        let ip = ip.parse().map_err(|_| HostMapError {
            line,
            msg: format!("bad IPv4 address {ip:?}"),
        })?;
        map.insert(name.to_ascii_lowercase(), ip);
    }
    Ok(map)
}

pub fn render_host_map(map: &HostMap) -> String {
    map.iter()
        .map(|(name, ip)| format!("{name} {ip}\n"))
        .collect()
}

/// The decision the server actually made, as logged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActualDecision {
    pub request_seq: u64,
    pub stamp: Stamp,
    pub location: String,
    pub host: RequestHost,
    pub uri: String,
    pub access_code: i64,
}

impl ActualDecision {
    pub fn access(&self) -> Access {
        Access::from_code(self.access_code)
    }

    pub fn from_event(event: &Event, hosts: &HostMap) -> Result<Self, ValidationError> {
        let seq = event.seq;
        let malformed = |reason: String| ValidationError::MalformedRequestEvent { seq, reason };
        let field = |name: &str| {
            event
                .get_str(name)
                .ok_or_else(|| malformed(format!("missing string property {name}")))
        };
        let location = field("location")?;
        let record = field("request")?;
        let uri = field("uri")?;
        let access_code = event
            .get_int("access_code")
            .ok_or_else(|| malformed("missing integer property access_code".into()))?;
        let client = request_client(record)
            .ok_or_else(|| malformed(format!("request {record:?} does not start with a client")))?;
        let host =
            resolve_client(client, hosts).ok_or_else(|| ValidationError::UnresolvableHost {
                seq,
                host: client.to_owned(),
            })?;
        Ok(ActualDecision {
            request_seq: seq,
            stamp: Stamp::new(event.timestamp, seq),
            location: location.to_owned(),
            host,
            uri: uri.to_owned(),
            access_code,
        })
    }
}

/// A dotted address stands for itself with no name; anything else must be
/// in the host map.
pub fn resolve_client(client: &str, hosts: &HostMap) -> Option<RequestHost> {
    if let Ok(ip) = client.parse::<Ipv4Addr>() {
        return Some(RequestHost::ip(ip));
    }
    let ip = hosts.get(&client.to_ascii_lowercase())?;
    Some(RequestHost::named(client, *ip))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub expected: Access,
    pub actual: Access,
    pub decision: Decision,
    pub snapshot_stamp: Stamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub request: ActualDecision,
    pub verdict: Verdict,
}

impl Violation {
    pub fn request_seq(&self) -> u64 {
        self.request.request_seq
    }

    pub fn expected(&self) -> Access {
        self.verdict.expected
    }

    pub fn actual(&self) -> Access {
        self.verdict.actual
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub checked: usize,
    pub passed: usize,
    pub failed: usize,
    pub violations: Vec<Violation>,
}

/// One configuration event, typed.
enum ConfigEvent {
    Order(Ordering),
    Directive(DirectiveKind, HostPattern),
}

fn config_event(event: &Event) -> Result<Option<(&str, ConfigEvent)>, ValidationError> {
    let bad = |reason: String| ValidationError::MalformedConfigEvent {
        seq: event.seq,
        reason,
    };
    let field = |name: &str| {
        event
            .get_str(name)
            .ok_or_else(|| bad(format!("missing string property {name}")))
    };
    match event.type_name.as_str() {
        ACCESS_ORDER => {
            let ordering = field("ordering")?
                .parse()
                .map_err(|e| bad(format!("{e}")))?;
            Ok(Some((field("location")?, ConfigEvent::Order(ordering))))
        }
        ACCESS_ALLOW => {
            let directive = field("directive")?;
            let kind = DirectiveKind::parse(directive)
                .ok_or_else(|| bad(format!("directive {directive:?} is neither allow nor deny")))?;
            let pattern = HostPattern::parse(field("host")?).map_err(|e| bad(e.to_string()))?;
            Ok(Some((
                field("location")?,
                ConfigEvent::Directive(kind, pattern),
            )))
        }
        _ => Ok(None),
    }
}

fn apply(snapshot: &mut PolicySnapshot, event: &Event, config: ConfigEvent) {
    match config {
        ConfigEvent::Order(ordering) => snapshot.ordering = ordering,
        ConfigEvent::Directive(kind, pattern) => {
            snapshot.push(kind, pattern, Stamp::new(event.timestamp, event.seq))
        }
    }
}

/// The policy of `location` built from every configuration event stamped
/// strictly before `stamp`. With none, the default `deny,allow` applies.
pub fn snapshot_at(
    trace: &Trace,
    location: &str,
    stamp: Stamp,
) -> Result<PolicySnapshot, ValidationError> {
    let mut snapshot = PolicySnapshot::new(location, Ordering::default());
    for event in &trace.events {
        if Stamp::new(event.timestamp, event.seq) >= stamp {
            continue;
        }
        if let Some((loc, config)) = config_event(event)? {
            if loc == location {
                apply(&mut snapshot, event, config);
            }
        }
    }
    Ok(snapshot)
}

pub fn validate_trace(trace: &Trace, hosts: &HostMap) -> Result<ValidationReport, ValidationError> {
    validate_location(trace, hosts, None)
}

/// Replays the trace once, keeping per-location snapshots current. With
/// `only` set, requests for other locations are skipped.
pub fn validate_location(
    trace: &Trace,
    hosts: &HostMap,
    only: Option<&str>,
) -> Result<ValidationReport, ValidationError> {
    let mut policies: BTreeMap<String, PolicySnapshot> = BTreeMap::new();
    let mut report = ValidationReport::default();
    // traces are seq ordered with non-decreasing timestamps, so everything
    // already applied is strictly earlier than the current event
    for event in &trace.events {
        if let Some((loc, config)) = config_event(event)? {
            let snapshot = policies
                .entry(loc.to_owned())
                .or_insert_with(|| PolicySnapshot::new(loc, Ordering::default()));
            apply(snapshot, event, config);
            continue;
        }
        if event.type_name != ACCESS_REQUEST {
            continue;
        }
        let actual = ActualDecision::from_event(event, hosts)?;
        if only.is_some_and(|l| l != actual.location) {
            continue;
        }
        let decision = match policies.get(&actual.location) {
            Some(snapshot) => decide(snapshot, &actual.host),
            None => decide(
                &PolicySnapshot::new(&actual.location, Ordering::default()),
                &actual.host,
            ),
        };
        let verdict = Verdict {
            expected: decision.access,
            actual: actual.access(),
            snapshot_stamp: actual.stamp,
            decision,
        };
        report.checked += 1;
        if verdict.expected == verdict.actual {
            report.passed += 1;
        } else {
            report.failed += 1;
            report.violations.push(Violation {
                request: actual,
                verdict,
            });
        }
    }
    Ok(report)
}

/// Multi-line account of why a request was judged wrong.
pub fn explain(violation: &Violation) -> String {
    let req = &violation.request;
    let decision = &violation.verdict.decision;
    let rule = match decision.rule {
        Rule::A => "A",
        Rule::B => "B",
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "violation: request seq={} at {} from {} uri={}",
        req.request_seq, req.location, req.host, req.uri
    );
    let _ = writeln!(out, "  ordering={}, rule {rule}", decision.ordering);
    if decision.matched.is_empty() {
        let default = match decision.ordering {
            Ordering::DenyAllow => "default-allow",
            Ordering::AllowDeny => "default-deny",
        };
        let _ = writeln!(
            out,
            "  no matching directives; {default} under {}",
            decision.ordering
        );
    }
    for d in &decision.matched {
        let _ = writeln!(out, "  matched {d} [{}]", d.stamp);
    }
    let _ = writeln!(
        out,
        "  expected {}, actual {} (access_code={})",
        violation.verdict.expected, violation.verdict.actual, req.access_code
    );
    out
}

pub fn tsv_header() -> &'static str {
    "seq\tlocation\tclient\tip\turi\texpected\tactual\taccess_code\tordering\trule\tmatched\n"
}

pub fn to_tsv_row(violation: &Violation) -> String {
    let req = &violation.request;
    let decision = &violation.verdict.decision;
    let matched: Vec<String> = decision.matched.iter().map(|d| d.to_string()).collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        req.request_seq,
        req.location,
        req.host.hostname.as_deref().unwrap_or("-"),
        req.host.ip,
        req.uri,
        violation.verdict.expected,
        violation.verdict.actual,
        req.access_code,
        decision.ordering,
        if decision.rule == Rule::A { "A" } else { "B" },
        matched.join(",")
    )
}
