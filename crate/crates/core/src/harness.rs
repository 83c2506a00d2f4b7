//! A simulated instrumented web server.
//!
//! The server reads an access configuration, reports one event per
//! directive it reads, then serves a synthetic workload and reports each
//! request with the access code it chose. A [`Mutation`] swaps in a faulty
//! decision procedure so the validator's detection power can be measured.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::events::{
    access_registry, request_record, ACCESS_ALLOW, ACCESS_ORDER, ACCESS_REQUEST, DENIED_CODE,
};
use crate::policy::{
    parse_config, rule_a, snapshots_from_config, Access, ConfigEntry, ConfigError, DirectiveKind,
    HostPattern, LocationBlock, Ordering, PatternClass, PolicySnapshot, RequestHost,
};
use crate::props;
use crate::runtime::{Runtime, RuntimeError, StepClock};
use crate::store::{parse_trace, LoadError, Trace};
use crate::validator::{validate_trace, HostMap, ValidationError, ValidationReport};

const CONFIG_SITE: &str = "http_config:read_access_config";
const REQUEST_SITE: &str = "mod_access:check_dir_access";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mutation {
    SwapOrdering,
    IgnoreDeny,
    IgnoreAllow,
    InvertDecision,
    MatchIpOnly,
    DefaultFlip,
}

impl Mutation {
    pub const ALL: [Mutation; 6] = [
        Mutation::SwapOrdering,
        Mutation::IgnoreDeny,
        Mutation::IgnoreAllow,
        Mutation::InvertDecision,
        Mutation::MatchIpOnly,
        Mutation::DefaultFlip,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Mutation::SwapOrdering => "SWAP_ORDERING",
            Mutation::IgnoreDeny => "IGNORE_DENY",
            Mutation::IgnoreAllow => "IGNORE_ALLOW",
            Mutation::InvertDecision => "INVERT_DECISION",
            Mutation::MatchIpOnly => "MATCH_IP_ONLY",
            Mutation::DefaultFlip => "DEFAULT_FLIP",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Mutation::SwapOrdering => "evaluates each location under the opposite ordering",
            Mutation::IgnoreDeny => "deny directives never match",
            Mutation::IgnoreAllow => "allow directives never match",
            Mutation::InvertDecision => "grants what should be denied and vice versa",
            Mutation::MatchIpOnly => "matches directives against the client address only",
            Mutation::DefaultFlip => "flips the outcome for hosts no directive mentions",
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mutation {0:?}")]
pub struct UnknownMutation(pub String);

impl FromStr for Mutation {
    type Err = UnknownMutation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutation::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownMutation(s.to_owned()))
    }
}

/// The simulated server's access check, optionally faulty.
pub fn server_decide(
    snapshot: &PolicySnapshot,
    host: &RequestHost,
    mutation: Option<Mutation>,
) -> Access {
    let ordering = match mutation {
        Some(Mutation::SwapOrdering) => snapshot.ordering.flipped(),
        _ => snapshot.ordering,
    };
    let mut allow = false;
    let mut deny = false;
    for d in &snapshot.directives {
        let hit = match (mutation, d.kind) {
            (Some(Mutation::IgnoreDeny), DirectiveKind::Deny) => false,
            (Some(Mutation::IgnoreAllow), DirectiveKind::Allow) => false,
            (Some(Mutation::MatchIpOnly), _) => d.pattern.matches_ip(host.ip),
            _ => d.pattern.matches(host),
        };
        match d.kind {
            DirectiveKind::Allow => allow |= hit,
            DirectiveKind::Deny => deny |= hit,
        }
    }
    let mut allowed = rule_a(ordering, allow, deny);
    match mutation {
        Some(Mutation::DefaultFlip) if !allow && !deny => allowed = !allowed,
        Some(Mutation::InvertDecision) => allowed = !allowed,
        _ => {}
    }
    Access::from_allowed(allowed)
}

/// Hosts that may issue requests: named hosts with their addresses, and
/// bare addresses with no known name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostUniverse {
    pub hosts: HostMap,
    pub bare_ips: BTreeSet<Ipv4Addr>,
}

const FILLER_NAMES: [&str; 2] = ["elsewhere.net", "visitor.example.com"];
const FILLER_IPS: [Ipv4Addr; 2] = [Ipv4Addr::new(9, 9, 9, 9), Ipv4Addr::new(203, 0, 113, 7)];

fn all_patterns(blocks: &[LocationBlock]) -> impl Iterator<Item = &HostPattern> {
    blocks
        .iter()
        .flat_map(|b| &b.entries)
        .flat_map(|e| match e {
            ConfigEntry::Directive { patterns, .. } => patterns.as_slice(),
            ConfigEntry::Order { .. } => &[],
        })
}

/// An address the pattern would match, if it describes addresses.
fn address_for(pattern: &HostPattern) -> Option<Ipv4Addr> {
    match pattern.class() {
        PatternClass::IpPrefix => {
            let mut octets: Vec<&str> = pattern.raw().split('.').collect();
            octets.resize(4, "1");
            octets.join(".").parse().ok()
        }
        PatternClass::Glob => pattern.raw().replace(['*', '?'], "1").parse().ok(),
        _ => None,
    }
}

/// A hostname the pattern would match, if it describes names.
fn name_for(pattern: &HostPattern) -> Option<String> {
    match pattern.class() {
        PatternClass::Domain => Some(pattern.raw().to_ascii_lowercase()),
        PatternClass::Glob => {
            let name = pattern
                .raw()
                .replace('*', "x")
                .replace('?', "a")
                .to_ascii_lowercase();
            let labels_ok = name.split('.').all(|l| !l.is_empty());
            (labels_ok && name.parse::<Ipv4Addr>().is_err()).then_some(name)
        }
        _ => None,
    }
}

impl HostUniverse {
    /// Hosts worth sending requests from for `blocks`. With `base`, the named
    /// hosts are exactly those of `base`, so any trace produced validates
    /// against it. Without it, names are made up from the domain patterns
    /// and some of them alias addresses the patterns mention.
    pub fn derive(blocks: &[LocationBlock], base: Option<&HostMap>, seed: u64) -> HostUniverse {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_4057);
        let pattern_ips: BTreeSet<Ipv4Addr> =
            all_patterns(blocks).filter_map(address_for).collect();
        let mut bare_ips = pattern_ips.clone();
        bare_ips.extend(FILLER_IPS);

        let hosts = match base {
            Some(map) => map.clone(),
            None => {
                let mut names: BTreeSet<String> = BTreeSet::new();
                for p in all_patterns(blocks) {
                    if let Some(name) = name_for(p) {
                        if p.class() == PatternClass::Domain {
                            names.insert(format!("www.{name}"));
                        }
                        names.insert(name);
                    }
                }
                names.extend(FILLER_NAMES.iter().map(|s| s.to_string()));
                let alias_pool: Vec<Ipv4Addr> = pattern_ips.iter().copied().collect();
                let mut fresh = 0u32;
                names
                    .into_iter()
                    .map(|name| {
                        let ip = if !alias_pool.is_empty() && rng.gen_ratio(1, 3) {
                            *alias_pool.choose(&mut rng).expect("non-empty")
                        } else {
                            fresh += 1;
                            Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 200, 0, 0)) + fresh)
                        };
                        (name, ip)
                    })
                    .collect()
            }
        };
        HostUniverse { hosts, bare_ips }
    }

    /// Named hosts in name order, then bare addresses in address order.
    pub fn candidates(&self) -> Vec<RequestHost> {
        self.hosts
            .iter()
            .map(|(name, ip)| RequestHost::named(name, *ip))
            .chain(self.bare_ips.iter().map(|ip| RequestHost::ip(*ip)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkItem {
    pub location: String,
    pub host: RequestHost,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub rng_seed: u64,
    pub requests: Vec<WorkItem>,
}

fn uri_for(location: &str, rng: &mut ChaCha8Rng) -> String {
    let page = rng.gen_range(0..5);
    format!("{}/page{page}.html", location.trim_end_matches('/'))
}

/// Deterministic workload of `n` requests. Coverage comes first: for every
/// directive a host it matches, for every location a host no directive
/// mentions, then for every directive a host it misses. The rest is random,
/// and the whole list is shuffled.
pub fn generate_workload(
    seed: u64,
    blocks: &[LocationBlock],
    universe: &HostUniverse,
    n: usize,
) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = universe.candidates();
    let snapshots = snapshots_from_config(blocks);
    let mut locations: Vec<String> = snapshots.keys().cloned().collect();
    if locations.is_empty() {
        locations.push("/".to_owned());
    }

    let mut coverage: Vec<(String, RequestHost)> = Vec::new();
    let mut pick = |rng: &mut ChaCha8Rng, loc: &str, pred: &dyn Fn(&RequestHost) -> bool| {
        let pool: Vec<&RequestHost> = candidates.iter().filter(|h| pred(h)).collect();
        if let Some(host) = pool.choose(rng) {
            let item = (loc.to_owned(), (*host).clone());
            if !coverage.contains(&item) {
                coverage.push(item);
            }
        }
    };
    for snap in snapshots.values() {
        for d in &snap.directives {
            pick(&mut rng, &snap.location, &|h| d.pattern.matches(h));
        }
    }
    for snap in snapshots.values() {
        pick(&mut rng, &snap.location, &|h| {
            !snap.directives.iter().any(|d| d.pattern.matches(h))
        });
    }
    for snap in snapshots.values() {
        for d in &snap.directives {
            pick(&mut rng, &snap.location, &|h| !d.pattern.matches(h));
        }
    }

    coverage.truncate(n);
    let mut requests: Vec<WorkItem> = coverage
        .into_iter()
        .map(|(location, host)| {
            let uri = uri_for(&location, &mut rng);
            WorkItem {
                location,
                host,
                uri,
            }
        })
        .collect();
    while requests.len() < n && !candidates.is_empty() {
        let location = locations.choose(&mut rng).expect("non-empty").clone();
        let host = candidates.choose(&mut rng).expect("non-empty").clone();
        let uri = uri_for(&location, &mut rng);
        requests.push(WorkItem {
            location,
            host,
            uri,
        });
    }
    requests.shuffle(&mut rng);
    Workload {
        rng_seed: seed,
        requests,
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mutation(#[from] UnknownMutation),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("reading back trace: {0}")]
    Load(#[from] LoadError),
    #[error("validating: {0}")]
    Validation(#[from] ValidationError),
}

/// Runs the server: reports every ordering and directive as it is read, then
/// serves the workload. Returns the decision taken for each request.
pub fn simulate(
    config_text: &str,
    workload: &Workload,
    mutation: Option<Mutation>,
    runtime: &Runtime,
) -> Result<Vec<Access>, SimError> {
    let blocks = parse_config(config_text)?;
    for block in &blocks {
        for entry in &block.entries {
            match entry {
                ConfigEntry::Order { ordering, .. } => {
                    runtime.report(
                        ACCESS_ORDER,
                        props!["location" => block.path.as_str(), "ordering" => ordering.as_str()],
                        CONFIG_SITE,
                    )?;
                }
                ConfigEntry::Directive { kind, patterns, .. } => {
                    for p in patterns {
                        runtime.report(
                            ACCESS_ALLOW,
                            props![
                                "location" => block.path.as_str(),
                                "host" => p.raw(),
                                "directive" => kind.as_str(),
                            ],
                            CONFIG_SITE,
                        )?;
                    }
                }
            }
        }
    }

    let snapshots = snapshots_from_config(&blocks);
    let mut decisions = Vec::with_capacity(workload.requests.len());
    for item in &workload.requests {
        let access = match snapshots.get(&item.location) {
            Some(snap) => server_decide(snap, &item.host, mutation),
            None => server_decide(
                &PolicySnapshot::new(&item.location, Ordering::default()),
                &item.host,
                mutation,
            ),
        };
        let code = if access.is_allowed() { 0 } else { DENIED_CODE };
        runtime.report(
            ACCESS_REQUEST,
            props![
                "location" => item.location.as_str(),
                "request" => request_record(&item.host.client(), "GET", &item.uri),
                "access_code" => code,
                "uri" => item.uri.as_str(),
            ],
            REQUEST_SITE,
        )?;
        decisions.push(access);
    }
    runtime.flush()?;
    Ok(decisions)
}

/// Fixed epoch for in-memory traces, so reruns are byte-identical.
pub const SIM_EPOCH: &str = "2000-07-01T00:00:00Z";

/// Simulates into memory with a step clock and reads the trace back.
pub fn simulate_trace(
    config_text: &str,
    workload: &Workload,
    mutation: Option<Mutation>,
) -> Result<(Trace, Vec<Access>), SimError> {
    let (sink, buf) = crate::runtime::Sink::memory();
    let registry = access_registry();
    let runtime = Runtime::new(
        registry.clone(),
        sink,
        Box::new(StepClock::new(1_000, 1_000)),
        SIM_EPOCH,
    )?;
    let decisions = simulate(config_text, workload, mutation, &runtime)?;
    drop(runtime);
    let bytes = buf.lock().unwrap_or_else(|e| e.into_inner()).clone();
    let text = String::from_utf8(bytes).expect("codec writes UTF-8");
    Ok((parse_trace(&text, &registry)?, decisions))
}

#[derive(Debug, Clone)]
pub struct MutantResult {
    pub mutation: Mutation,
    /// Requests whose decision differs from the faithful server's.
    pub decisions_changed: usize,
    pub report: ValidationReport,
}

impl MutantResult {
    pub fn detected(&self) -> bool {
        self.report.failed > 0
    }
}

/// Runs every mutation over the same workload and validates each trace.
pub fn run_mutants(
    config_text: &str,
    workload: &Workload,
    hosts: &HostMap,
) -> Result<Vec<MutantResult>, SimError> {
    let (_, faithful) = simulate_trace(config_text, workload, None)?;
    Mutation::ALL
        .into_iter()
        .map(|mutation| {
            let (trace, decisions) = simulate_trace(config_text, workload, Some(mutation))?;
            let decisions_changed = decisions
                .iter()
                .zip(&faithful)
                .filter(|(a, b)| a != b)
                .count();
            Ok(MutantResult {
                mutation,
                decisions_changed,
                report: validate_trace(&trace, hosts)?,
            })
        })
        .collect()
}

/// A random configuration with the universe it was drawn from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config_text: String,
    pub universe: HostUniverse,
}

const LABELS: [&str; 4] = ["www", "mail", "api", "shop"];
const DOMAINS: [&str; 3] = ["alpha.org", "beta.com", "gamma.net"];
const LOCATIONS: [&str; 4] = ["/", "/private", "/admin", "/docs"];

/// Up to three locations with up to five host patterns each, over twelve
/// named hosts and eight bare addresses, two of the names aliasing bare
/// addresses.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut bare_ips = BTreeSet::new();
    while bare_ips.len() < 8 {
        let first = *[10u8, 123, 192].choose(&mut rng).expect("non-empty");
        let second = *[0u8, 1, 156].choose(&mut rng).expect("non-empty");
        bare_ips.insert(Ipv4Addr::new(
            first,
            second,
            rng.gen_range(0..4),
            rng.gen_range(1..10),
        ));
    }
    let ip_list: Vec<Ipv4Addr> = bare_ips.iter().copied().collect();

    let mut names: Vec<String> = LABELS
        .iter()
        .flat_map(|l| DOMAINS.iter().map(move |d| format!("{l}.{d}")))
        .collect();
    names.shuffle(&mut rng);
    let aliased: Vec<Ipv4Addr> = ip_list.choose_multiple(&mut rng, 2).copied().collect();
    let hosts: HostMap = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let ip = match aliased.get(i) {
                Some(ip) => *ip,
                None => Ipv4Addr::new(172, 16, 0, i as u8 + 1),
            };
            (name.clone(), ip)
        })
        .collect();

    let random_pattern = |rng: &mut ChaCha8Rng| -> String {
        let ip = ip_list.choose(rng).expect("non-empty").to_string();
        match rng.gen_range(0..10) {
            0 => "all".to_owned(),
            1 | 2 => names.choose(rng).expect("non-empty").clone(),
            3 => DOMAINS.choose(rng).expect("non-empty").to_string(),
            4 | 5 => ip,
            6 => {
                let octets: Vec<&str> = ip.split('.').collect();
                octets[..rng.gen_range(1..4)].join(".")
            }
            7 => format!("*.{}", DOMAINS.choose(rng).expect("non-empty")),
            8 => format!("{}.*", ip.split('.').next().expect("octet")),
            _ => "nowhere.io".to_owned(),
        }
    };

    let mut config = String::new();
    let count = rng.gen_range(1..=3);
    for location in LOCATIONS.choose_multiple(&mut rng, count) {
        config.push_str(&format!("<Location {location}>\n"));
        if rng.gen_ratio(3, 4) {
            let ordering = if rng.gen() {
                "allow,deny"
            } else {
                "deny,allow"
            };
            config.push_str(&format!("    Order {ordering}\n"));
        }
        let mut budget = rng.gen_range(0..=5);
        while budget > 0 {
            let per_line = rng.gen_range(1..=budget.min(2));
            let verb = if rng.gen() { "Allow" } else { "Deny" };
            let patterns: Vec<String> = (0..per_line).map(|_| random_pattern(&mut rng)).collect();
            config.push_str(&format!("    {verb} from {}\n", patterns.join(" ")));
            budget -= per_line;
        }
        config.push_str("</Location>\n");
    }

    Scenario {
        config_text: config,
        universe: HostUniverse { hosts, bare_ips },
    }
}

/// Per-location request counts of a workload, for display.
pub fn workload_locations(workload: &Workload) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for item in &workload.requests {
        *out.entry(item.location.as_str()).or_default() += 1;
    }
    out
}
