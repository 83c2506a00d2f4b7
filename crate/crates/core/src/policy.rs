//! Apache-style host access control: `Order`, `Allow from` and `Deny from`
//! directives grouped by location, and the allow/deny decision they imply.
//!
//! Host patterns come in four classes:
//!
//! * `all` matches every request.
//! * a domain such as `goodguys.org` matches that hostname and any hostname
//!   ending in `.goodguys.org` (case-insensitive).
//! * an IP prefix of one to four octets such as `123.156` matches the full
//!   address or any address that continues it at an octet boundary.
//! * a glob containing `*` or `?` matches the hostname or the dotted address.
//!
//! A directive applies to a request when it matches either the hostname or
//! the address, so a deny on a name also reaches the address the name
//! resolves to.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

use crate::glob::glob_match;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad host pattern {raw:?}: {reason}")]
pub struct PatternError {
    pub raw: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternClass {
    All,
    Domain,
    IpPrefix,
    Glob,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HostPattern {
    raw: String,
    class: PatternClass,
}

impl HostPattern {
    pub fn parse(raw: &str) -> Result<HostPattern, PatternError> {
        let err = |reason| PatternError {
            raw: raw.to_owned(),
            reason,
        };
        let class = if raw == "all" {
            PatternClass::All
        } else if raw.is_empty() {
            return Err(err("empty pattern"));
        } else if raw.contains(['*', '?']) {
            if !raw
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "*?.-".contains(c))
            {
                return Err(err("unexpected character"));
            }
            PatternClass::Glob
        } else if raw.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
            let octets: Vec<&str> = raw.split('.').collect();
            if octets.len() > 4 {
                return Err(err("more than four octets"));
            }
            for octet in octets {
                if octet.is_empty() || (octet.len() > 1 && octet.starts_with('0')) {
                    return Err(err("octets must be canonical decimal"));
                }
                if octet.len() > 3 || octet.parse::<u16>().map_or(true, |v| v > 255) {
                    return Err(err("octet out of range"));
                }
            }
            PatternClass::IpPrefix
        } else {
            let labels: Vec<&str> = raw.split('.').collect();
            if labels
                .iter()
                .any(|l| l.is_empty() || !l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-'))
            {
                return Err(err("not a dotted domain name"));
            }
            if !labels
                .iter()
                .any(|l| l.bytes().any(|b| b.is_ascii_alphabetic()))
            {
                return Err(err("domain needs an alphabetic label"));
            }
            PatternClass::Domain
        };
        Ok(HostPattern {
            raw: raw.to_owned(),
            class,
        })
    }

    pub fn all() -> HostPattern {
        HostPattern {
            raw: "all".to_owned(),
            class: PatternClass::All,
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn class(&self) -> PatternClass {
        self.class
    }

    /// Whether the pattern matches by hostname alone.
    pub fn matches_name(&self, hostname: &str) -> bool {
        match self.class {
            PatternClass::All => true,
            PatternClass::Domain => {
                let name = hostname.to_ascii_lowercase();
                let raw = self.raw.to_ascii_lowercase();
                name == raw
                    || (name.len() > raw.len()
                        && name.ends_with(&raw)
                        && name.as_bytes()[name.len() - raw.len() - 1] == b'.')
            }
            PatternClass::IpPrefix => false,
            PatternClass::Glob => glob_match(
                &self.raw.to_ascii_lowercase(),
                &hostname.to_ascii_lowercase(),
            ),
        }
    }

    /// Whether the pattern matches by address alone.
    pub fn matches_ip(&self, ip: Ipv4Addr) -> bool {
        let dotted = ip.to_string();
        match self.class {
            PatternClass::All => true,
            PatternClass::Domain => false,
            PatternClass::IpPrefix => {
                dotted == self.raw
                    || (dotted.starts_with(&self.raw)
                        && dotted.as_bytes().get(self.raw.len()) == Some(&b'.'))
            }
            PatternClass::Glob => glob_match(&self.raw, &dotted),
        }
    }

    pub fn matches(&self, host: &RequestHost) -> bool {
        host.hostname
            .as_deref()
            .is_some_and(|n| self.matches_name(n))
            || self.matches_ip(host.ip)
    }
}

impl fmt::Display for HostPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for HostPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HostPattern::parse(s)
    }
}

/// The requesting client: always an address, plus the hostname when the
/// reverse mapping is known.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestHost {
    pub hostname: Option<String>,
    pub ip: Ipv4Addr,
}

impl RequestHost {
    pub fn named(hostname: &str, ip: Ipv4Addr) -> Self {
        RequestHost {
            hostname: Some(hostname.to_owned()),
            ip,
        }
    }

    pub fn ip(ip: Ipv4Addr) -> Self {
        RequestHost { hostname: None, ip }
    }

    /// The name if known, otherwise the dotted address.
    pub fn client(&self) -> String {
        match &self.hostname {
            Some(name) => name.clone(),
            None => self.ip.to_string(),
        }
    }
}

impl fmt::Display for RequestHost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.hostname {
            Some(name) => write!(f, "{name} ({})", self.ip),
            None => write!(f, "{}", self.ip),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DirectiveKind {
    Allow,
    Deny,
}

impl DirectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DirectiveKind::Allow => "allow",
            DirectiveKind::Deny => "deny",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "allow" => Some(DirectiveKind::Allow),
            "deny" => Some(DirectiveKind::Deny),
            _ => None,
        }
    }
}

/// Position of an event in a trace; compared as (timestamp, seq).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Stamp {
    pub timestamp: u64,
    pub seq: u64,
}

impl Stamp {
    pub fn new(timestamp: u64, seq: u64) -> Self {
        Stamp { timestamp, seq }
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} seq={}", self.timestamp, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Directive {
    pub location: String,
    pub kind: DirectiveKind,
    pub pattern: HostPattern,
    pub stamp: Stamp,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.kind {
            DirectiveKind::Allow => "Allow",
            DirectiveKind::Deny => "Deny",
        };
        write!(f, "{verb} {}", self.pattern)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Ordering {
    #[default]
    DenyAllow,
    AllowDeny,
}

impl Ordering {
    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::DenyAllow => "deny,allow",
            Ordering::AllowDeny => "allow,deny",
        }
    }

    pub fn flipped(self) -> Ordering {
        match self {
            Ordering::DenyAllow => Ordering::AllowDeny,
            Ordering::AllowDeny => Ordering::DenyAllow,
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingError {
    #[error("the mutual-failure ordering is not supported")]
    MutualFailure,
    #[error("unknown ordering {0:?}")]
    Unknown(String),
}

impl FromStr for Ordering {
    type Err = OrderingError;

    /// Case-insensitive; whitespace around the comma is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        match compact.as_str() {
            "deny,allow" => Ok(Ordering::DenyAllow),
            "allow,deny" => Ok(Ordering::AllowDeny),
            "mutual-failure" => Err(OrderingError::MutualFailure),
            _ => Err(OrderingError::Unknown(s.to_owned())),
        }
    }
}

/// The policy in force for one location at some instant.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PolicySnapshot {
    pub location: String,
    pub ordering: Ordering,
    pub directives: Vec<Directive>,
}

impl PolicySnapshot {
    pub fn new(location: impl Into<String>, ordering: Ordering) -> Self {
        PolicySnapshot {
            location: location.into(),
            ordering,
            directives: Vec::new(),
        }
    }

    pub fn push(&mut self, kind: DirectiveKind, pattern: HostPattern, stamp: Stamp) {
        self.directives.push(Directive {
            location: self.location.clone(),
            kind,
            pattern,
            stamp,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Access {
    Allowed,
    Denied,
}

impl Access {
    pub fn from_allowed(allowed: bool) -> Self {
        if allowed {
            Access::Allowed
        } else {
            Access::Denied
        }
    }

    pub fn is_allowed(self) -> bool {
        self == Access::Allowed
    }

    /// Zero grants, anything else denies.
    pub fn from_code(access_code: i64) -> Self {
        Access::from_allowed(access_code == 0)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Access::Allowed => "allowed",
            Access::Denied => "denied",
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which of the two decision rules produced a verdict: A allows, B denies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    A,
    B,
}

/// Rule A: the request should be allowed.
pub fn rule_a(ordering: Ordering, allow_matched: bool, deny_matched: bool) -> bool {
    match ordering {
        Ordering::AllowDeny => allow_matched && !deny_matched,
        Ordering::DenyAllow => !deny_matched || allow_matched,
    }
}

/// Rule B: the request should be denied.
pub fn rule_b(ordering: Ordering, allow_matched: bool, deny_matched: bool) -> bool {
    match ordering {
        Ordering::AllowDeny => !allow_matched || deny_matched,
        Ordering::DenyAllow => deny_matched && !allow_matched,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub access: Access,
    pub ordering: Ordering,
    pub rule: Rule,
    /// Every directive of the snapshot that matched the host, in snapshot order.
    pub matched: Vec<Directive>,
}

pub fn decide(snapshot: &PolicySnapshot, host: &RequestHost) -> Decision {
    let matched: Vec<Directive> = snapshot
        .directives
        .iter()
        .filter(|d| d.pattern.matches(host))
        .cloned()
        .collect();
    let allow = matched.iter().any(|d| d.kind == DirectiveKind::Allow);
    let deny = matched.iter().any(|d| d.kind == DirectiveKind::Deny);
    let allowed = rule_a(snapshot.ordering, allow, deny);
    debug_assert_ne!(allowed, rule_b(snapshot.ordering, allow, deny));
    Decision {
        access: Access::from_allowed(allowed),
        ordering: snapshot.ordering,
        rule: if allowed { Rule::A } else { Rule::B },
        matched,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigEntry {
    Order {
        line: usize,
        ordering: Ordering,
    },
    Directive {
        line: usize,
        kind: DirectiveKind,
        patterns: Vec<HostPattern>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationBlock {
    pub path: String,
    pub entries: Vec<ConfigEntry>,
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find('#'), line.find("//")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(line.len());
    &line[..cut]
}

/// Parses `<Location /path>` blocks holding `Order`, `Allow from` and
/// `Deny from` lines. `#` and `//` start comments.
pub fn parse_config(text: &str) -> Result<Vec<LocationBlock>, ConfigError> {
    let mut blocks = Vec::new();
    let mut open: Option<(usize, LocationBlock)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| ConfigError { line, msg };
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(tag) = content.strip_prefix('<') {
            let tag = tag
                .strip_suffix('>')
                .ok_or_else(|| err(format!("unterminated tag {content:?}")))?
                .trim();
            if tag.eq_ignore_ascii_case("/location") {
                let (_, block) = open
                    .take()
                    .ok_or_else(|| err("</Location> without <Location>".into()))?;
                blocks.push(block);
                continue;
            }
            let (name, arg) = tag.split_once(char::is_whitespace).unwrap_or((tag, ""));
            if !name.eq_ignore_ascii_case("location") {
                return Err(err(format!("unsupported section <{name}>")));
            }
            if let Some((start, _)) = &open {
                return Err(err(format!(
                    "nested <Location>; block from line {start} is still open"
                )));
            }
            let path = arg.trim().trim_matches('"');
            if !path.starts_with('/') || path.contains(char::is_whitespace) {
                return Err(err(format!(
                    "location {path:?} must be a path starting with `/`"
                )));
            }
            open = Some((
                line,
                LocationBlock {
                    path: path.to_owned(),
                    entries: Vec::new(),
                },
            ));
            continue;
        }
        let mut words = content.split_whitespace();
        let keyword = words.next().unwrap_or_default().to_ascii_lowercase();
        let entry = match keyword.as_str() {
            "order" => {
                let rest: Vec<&str> = words.collect();
                let ordering = rest
                    .join("")
                    .parse::<Ordering>()
                    .map_err(|e| err(e.to_string()))?;
                ConfigEntry::Order { line, ordering }
            }
            "allow" | "deny" => {
                let kind = DirectiveKind::parse(&keyword).expect("matched above");
                if !words.next().is_some_and(|w| w.eq_ignore_ascii_case("from")) {
                    return Err(err(format!("expected `{} from <host>...`", keyword)));
                }
                let patterns = words
                    .map(HostPattern::parse)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(e.to_string()))?;
                if patterns.is_empty() {
                    return Err(err("directive names no hosts".into()));
                }
                ConfigEntry::Directive {
                    line,
                    kind,
                    patterns,
                }
            }
            other => return Err(err(format!("unknown directive {other:?}"))),
        };
        match &mut open {
            Some((_, block)) => block.entries.push(entry),
            None => return Err(err("directive outside a <Location> block".into())),
        }
    }
    if let Some((start, block)) = open {
        return Err(ConfigError {
            line: start,
            msg: format!("<Location {}> is never closed", block.path),
        });
    }
    Ok(blocks)
}

/// Folds parsed blocks into one snapshot per location, as a server would
/// after reading the whole file. Later `Order` lines win; directive stamps
/// are (0, position in file).
pub fn snapshots_from_config(blocks: &[LocationBlock]) -> BTreeMap<String, PolicySnapshot> {
    let mut out: BTreeMap<String, PolicySnapshot> = BTreeMap::new();
    let mut position = 0;
    for block in blocks {
        let snap = out
            .entry(block.path.clone())
            .or_insert_with(|| PolicySnapshot::new(&block.path, Ordering::default()));
        for entry in &block.entries {
            match entry {
                ConfigEntry::Order { ordering, .. } => snap.ordering = *ordering,
                ConfigEntry::Directive { kind, patterns, .. } => {
                    for p in patterns {
                        position += 1;
                        snap.push(*kind, p.clone(), Stamp::new(0, position));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = "<Location /private>
Order allow,deny
Allow from goodguys.org
Deny from badguys.com
Allow from 127.0.0.1 // Localhost
Allow from 123.156.3.5
</Location>
";

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn pat(s: &str) -> HostPattern {
        HostPattern::parse(s).unwrap()
    }

    fn example_snapshot() -> PolicySnapshot {
        snapshots_from_config(&parse_config(EXAMPLE).unwrap())
            .remove("/private")
            .unwrap()
    }

    #[test]
    fn classifies_patterns() {
        assert_eq!(pat("all").class(), PatternClass::All);
        assert_eq!(pat("goodguys.org").class(), PatternClass::Domain);
        assert_eq!(pat("localhost").class(), PatternClass::Domain);
        assert_eq!(pat("3com.net").class(), PatternClass::Domain);
        assert_eq!(pat("123.156").class(), PatternClass::IpPrefix);
        assert_eq!(pat("10").class(), PatternClass::IpPrefix);
        assert_eq!(pat("*.org").class(), PatternClass::Glob);
        assert_eq!(pat("10.0.?.1").class(), PatternClass::Glob);
        for bad in [
            "",
            "1.2.3.4.5",
            "256.1",
            "01.2",
            "1..2",
            "a..b",
            "a/b",
            "10.0.0.0/8",
            ".org",
            "*/x",
        ] {
            assert!(HostPattern::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn domain_patterns_match_label_suffix() {
        let p = pat("goodguys.org");
        assert!(p.matches(&RequestHost::named("www.goodguys.org", ip("1.1.1.1"))));
        assert!(p.matches(&RequestHost::named("GoodGuys.ORG", ip("1.1.1.1"))));
        assert!(!p.matches(&RequestHost::named("notgoodguys.org", ip("1.1.1.1"))));
        assert!(!p.matches(&RequestHost::ip(ip("1.1.1.1"))));
    }

    #[test]
    fn ip_patterns_match_octet_prefix() {
        assert!(pat("127.0.0.1").matches(&RequestHost::ip(ip("127.0.0.1"))));
        assert!(pat("123.156").matches(&RequestHost::ip(ip("123.156.3.5"))));
        assert!(!pat("123.156").matches(&RequestHost::ip(ip("123.15.3.5"))));
        assert!(!pat("12").matches(&RequestHost::ip(ip("123.1.1.1"))));
        assert!(!pat("123.156").matches(&RequestHost::named("123.156.example", ip("9.9.9.9"))));
    }

    #[test]
    fn all_and_glob() {
        let any = RequestHost::named("x.y", ip("9.9.9.9"));
        assert!(pat("all").matches(&any));
        assert!(pat("all").matches(&RequestHost::ip(ip("0.0.0.0"))));
        assert!(pat("*.y").matches(&any));
        assert!(pat("9.9.*").matches(&any));
        assert!(!pat("*.z").matches(&any));
    }

    #[test]
    fn example_configuration_decisions() {
        let snap = example_snapshot();
        assert_eq!(snap.ordering, Ordering::AllowDeny);
        assert_eq!(snap.directives.len(), 4);

        let good = decide(&snap, &RequestHost::named("goodguys.org", ip("192.0.2.10")));
        assert_eq!(good.access, Access::Allowed);
        assert_eq!(good.rule, Rule::A);
        assert_eq!(good.matched.len(), 1);

        let bad = decide(&snap, &RequestHost::named("badguys.com", ip("123.156.3.5")));
        assert_eq!(bad.access, Access::Denied);
        assert_eq!(bad.matched.len(), 2);

        let other = decide(&snap, &RequestHost::ip(ip("9.9.9.9")));
        assert_eq!(other.access, Access::Denied);
        assert!(other.matched.is_empty());

        assert_eq!(
            decide(&snap, &RequestHost::ip(ip("123.156.3.5"))).access,
            Access::Allowed
        );
        assert_eq!(
            decide(&snap, &RequestHost::ip(ip("127.0.0.1"))).access,
            Access::Allowed
        );
    }

    #[test]
    fn empty_snapshot_uses_ordering_default() {
        let host = RequestHost::named("anyone.net", ip("8.8.8.8"));
        let open = PolicySnapshot::new("/", Ordering::DenyAllow);
        assert_eq!(decide(&open, &host).access, Access::Allowed);
        let closed = PolicySnapshot::new("/", Ordering::AllowDeny);
        assert_eq!(decide(&closed, &host).access, Access::Denied);
    }

    #[test]
    fn rules_are_complementary() {
        for ordering in [Ordering::AllowDeny, Ordering::DenyAllow] {
            for a in [false, true] {
                for d in [false, true] {
                    assert_ne!(rule_a(ordering, a, d), rule_b(ordering, a, d));
                }
            }
        }
    }

    #[test]
    fn parses_example_block() {
        let blocks = parse_config(EXAMPLE).unwrap();
        assert_eq!(blocks.len(), 1);
        let entries = &blocks[0].entries;
        assert_eq!(entries.len(), 5);
        assert_eq!(
            entries[0],
            ConfigEntry::Order {
                line: 2,
                ordering: Ordering::AllowDeny
            }
        );
        assert_eq!(
            entries
                .iter()
                .filter(|e| matches!(e, ConfigEntry::Directive { .. }))
                .count(),
            4
        );
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        assert!(parse_config("").unwrap().is_empty());
        assert!(parse_config("# only a comment\n\n").unwrap().is_empty());
        let cases = [
            ("<Location /p>\nOrder mutual-failure\n</Location>", 2),
            ("<Location /p>\nOrder sideways\n</Location>", 2),
            ("Allow from all", 1),
            ("<Location /p>\nPermit from all\n</Location>", 2),
            ("<Location /p>\nAllow from 300.1\n</Location>", 2),
            ("<Location /p>\nAllow all\n</Location>", 2),
            ("<Location /p>\nDeny from\n</Location>", 2),
            ("<Location p>\n</Location>", 1),
            ("<Location /p>\n<Location /q>\n", 2),
            ("</Location>", 1),
            ("\n<Location /p>\nAllow from all\n", 2),
        ];
        for (text, line) in cases {
            let err = parse_config(text).unwrap_err();
            assert_eq!(err.line, line, "{text:?}: {err}");
        }
        let mutual = parse_config("<Location /p>\nOrder mutual-failure\n</Location>").unwrap_err();
        assert!(mutual.msg.contains("mutual-failure"));
    }

    #[test]
    fn multiple_patterns_and_case_insensitive_keywords() {
        let blocks = parse_config(
            "<location /a>\n  ORDER Deny, Allow\n  deny FROM all\n  allow from x.org 10.1 # trusted\n</LOCATION>\n",
        )
        .unwrap();
        let snaps = snapshots_from_config(&blocks);
        let snap = &snaps["/a"];
        assert_eq!(snap.ordering, Ordering::DenyAllow);
        assert_eq!(snap.directives.len(), 3);
        assert_eq!(
            decide(snap, &RequestHost::ip(ip("10.1.2.3"))).access,
            Access::Allowed
        );
        assert_eq!(
            decide(snap, &RequestHost::ip(ip("10.2.2.3"))).access,
            Access::Denied
        );
    }
}
