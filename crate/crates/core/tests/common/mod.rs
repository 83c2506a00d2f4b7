//! Independent reference implementations used as test oracles. None of this
//! calls into the matching, decision or query code it checks.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use proptest::prelude::*;
use regex::Regex;
use thirdeye::policy::RequestHost;
use thirdeye::schema::{Event, EventType, Kind, PropertySpec, SchemaRegistry, Value};

pub const EXAMPLE_CONFIG: &str = include_str!("../../data/apache_example.conf");
pub const EXAMPLE_HOSTS: &str = include_str!("../../data/apache_example.hosts");

pub fn glob_regex(glob: &str) -> Regex {
    let mut re = String::from("(?i)^");
    for c in glob.chars() {
        match c {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            c => re.push_str(&regex::escape(&c.to_string())),
        }
    }
    re.push('$');
    Regex::new(&re).unwrap()
}

fn glob_regex_case_sensitive(glob: &str) -> Regex {
    let re = glob_regex(glob);
    Regex::new(&re.as_str().replacen("(?i)", "", 1)).unwrap()
}

/// Host matching written from the pattern-class definitions: label-suffix
/// comparison for names, octet-array prefix comparison for addresses, a
/// regex for globs.
pub fn oracle_match(pattern: &str, host: &RequestHost) -> bool {
    if pattern == "all" {
        return true;
    }
    let octets = host.ip.octets();
    if pattern.contains(['*', '?']) {
        let by_name = host
            .hostname
            .as_deref()
            .is_some_and(|n| glob_regex(pattern).is_match(n));
        return by_name || glob_regex_case_sensitive(pattern).is_match(&host.ip.to_string());
    }
    if pattern.chars().all(|c| c.is_ascii_digit() || c == '.') {
        let prefix: Vec<u8> = pattern.split('.').map(|o| o.parse().unwrap()).collect();
        return octets[..prefix.len()] == prefix[..];
    }
    let Some(name) = &host.hostname else {
        return false;
    };
    let want: Vec<String> = pattern.split('.').map(|l| l.to_lowercase()).collect();
    let have: Vec<String> = name.split('.').map(|l| l.to_lowercase()).collect();
    have.len() >= want.len() && have[have.len() - want.len()..] == want[..]
}

/// Sequential evaluation: under deny,allow start from "allowed", apply every
/// matching deny, then every matching allow; under allow,deny start from
/// "denied", apply allows, then denies. The last applicable step wins.
pub fn oracle_allowed(allow_deny: bool, directives: &[(bool, bool)]) -> bool {
    // (is_allow, matches)
    let mut allowed = !allow_deny;
    let phases: [bool; 2] = if allow_deny {
        [true, false]
    } else {
        [false, true]
    };
    for phase_is_allow in phases {
        for &(is_allow, matches) in directives {
            if is_allow == phase_is_allow && matches {
                allowed = is_allow;
            }
        }
    }
    allowed
}

pub fn ip(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

/// Sixteen clients exercising suffixes, aliases, octet boundaries and case.
pub fn closed_universe() -> Vec<RequestHost> {
    vec![
        RequestHost::named("goodguys.org", ip("192.0.2.10")),
        RequestHost::named("www.goodguys.org", ip("192.0.2.11")),
        RequestHost::named("Shop.GoodGuys.ORG", ip("10.1.2.3")),
        RequestHost::named("notgoodguys.org", ip("10.1.2.4")),
        RequestHost::named("badguys.com", ip("123.156.3.5")),
        RequestHost::named("mail.badguys.com", ip("123.156.7.1")),
        RequestHost::named("badguys.com.au", ip("10.0.0.1")),
        RequestHost::named("localhost", ip("127.0.0.1")),
        RequestHost::ip(ip("127.0.0.1")),
        RequestHost::ip(ip("123.156.3.5")),
        RequestHost::ip(ip("123.15.3.5")),
        RequestHost::ip(ip("123.156.30.5")),
        RequestHost::ip(ip("9.9.9.9")),
        RequestHost::ip(ip("10.1.2.3")),
        RequestHost::ip(ip("192.0.2.10")),
        RequestHost::ip(ip("12.3.4.5")),
    ]
}

pub const PATTERN_POOL: [&str; 12] = [
    "all",
    "goodguys.org",
    "badguys.com",
    "com",
    "127.0.0.1",
    "123.156.3.5",
    "123.156",
    "123.15",
    "10",
    "*.goodguys.org",
    "123.156.?.5",
    "*guys*",
];

/// Types covering every property kind, with inheritance and an empty type.
pub fn codec_registry() -> SchemaRegistry {
    let mut reg = SchemaRegistry::with_builtins();
    reg.register(
        EventType::new("Wide")
            .prop("s", Kind::String)
            .prop("n", Kind::Integer)
            .prop("b", Kind::Boolean)
            .property(PropertySpec::new("t", Kind::Timestamp).with_default(Value::Timestamp(0))),
    )
    .unwrap();
    reg.register(
        EventType::new("Narrow")
            .extends("Wide")
            .prop("extra", Kind::String),
    )
    .unwrap();
    reg.register(EventType::new("Empty")).unwrap();
    reg
}

/// Strings dense in separators and escapes.
pub fn adversarial_string() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            4 => Just(';'),
            4 => Just('='),
            4 => Just('\\'),
            4 => Just('\t'),
            2 => Just('\n'),
            1 => Just('\r'),
            2 => Just('t'),
            2 => Just('n'),
            1 => Just('é'),
            1 => Just('"'),
            6 => proptest::char::range(' ', '~'),
        ],
        0..16,
    )
    .prop_map(|chars| chars.into_iter().collect())
}

pub fn arb_codec_event() -> impl Strategy<Value = Event> {
    (
        0..3usize,
        any::<u64>(),
        any::<u64>(),
        adversarial_string(),
        adversarial_string(),
        any::<i64>(),
        any::<bool>(),
        any::<u64>(),
        adversarial_string(),
    )
        .prop_map(|(which, seq, ts, source, s, n, b, t, extra)| {
            let reg = codec_registry();
            let wide = vec![
                ("s".to_string(), Value::Str(s)),
                ("n".to_string(), Value::Int(n)),
                ("b".to_string(), Value::Bool(b)),
                ("t".to_string(), Value::Timestamp(t)),
            ];
            let (ty, props) = match which {
                0 => ("Wide", wide),
                1 => {
                    let mut p = wide;
                    p.push(("extra".to_string(), Value::Str(extra)));
                    ("Narrow", p)
                }
                _ => ("Empty", vec![]),
            };
            let mut ev = reg.construct_event(ty, props, ts, &source).unwrap();
            ev.seq = seq;
            ev
        })
}

/// Reference filter for one `prop OP literal` predicate over one event.
pub fn naive_predicate(event: &Event, prop: &str, op: &str, literal: &str) -> bool {
    let value = match prop {
        "timestamp" => Some(Value::Timestamp(event.timestamp)),
        "source_location" => Some(Value::Str(event.source_location.clone())),
        _ => event.properties.get(prop).cloned(),
    };
    let ord = match &value {
        None => return false,
        Some(Value::Str(s)) => {
            if op == "glob" {
                return glob_regex_case_sensitive(literal).is_match(s);
            }
            s.as_str().cmp(literal)
        }
        Some(Value::Int(i)) => i.cmp(&literal.parse::<i64>().unwrap()),
        Some(Value::Timestamp(t)) => t.cmp(&literal.parse::<u64>().unwrap()),
        Some(Value::Bool(b)) => b.cmp(&literal.parse::<bool>().unwrap()),
    };
    use std::cmp::Ordering::*;
    match op {
        "=" => ord == Equal,
        "!=" => ord != Equal,
        "<" => ord == Less,
        "<=" => ord != Greater,
        ">" => ord == Greater,
        ">=" => ord != Less,
        _ => panic!("unknown op {op}"),
    }
}
