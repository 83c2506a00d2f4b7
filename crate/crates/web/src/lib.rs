//! WebAssembly bindings for the demo page. Each export takes plain strings
//! and returns a JSON document; failures come back as `{"error": "..."}`.

use serde_json::{json, Value as Json};
use thirdeye::codec::encode_event;
use thirdeye::events::access_registry;
use thirdeye::harness::{generate_workload, simulate_trace, HostUniverse, Mutation};
use thirdeye::policy::{
    decide, parse_config, snapshots_from_config, Directive, Ordering, PolicySnapshot,
};
use thirdeye::store::{parse_trace, run_query, summarize, Predicate, Query};
use thirdeye::validator::{
    explain, parse_host_map, render_host_map, resolve_client, validate_trace,
};
use wasm_bindgen::prelude::*;

fn directive_json(d: &Directive) -> Json {
    json!({
        "kind": d.kind.as_str(),
        "pattern": d.pattern.raw(),
        "text": d.to_string(),
        "stamp": d.stamp.to_string(),
    })
}

fn to_string(result: Result<Json, String>) -> String {
    result.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

/// Decides whether `client` (a host name from `hosts`, or a dotted
/// address) may access `location` under `config`.
pub fn evaluate_json(
    config: &str,
    hosts: &str,
    location: &str,
    client: &str,
) -> Result<Json, String> {
    let blocks = parse_config(config).map_err(|e| format!("config: {e}"))?;
    let hosts = parse_host_map(hosts).map_err(|e| format!("hosts: {e}"))?;
    let client = client.trim();
    let host = resolve_client(client, &hosts)
        .ok_or_else(|| format!("{client:?} is neither an address nor in the host map"))?;
    let snapshots = snapshots_from_config(&blocks);
    let snapshot = snapshots
        .get(location)
        .cloned()
        .unwrap_or_else(|| PolicySnapshot::new(location, Ordering::default()));
    let decision = decide(&snapshot, &host);
    let rule = match decision.rule {
        thirdeye::policy::Rule::A => "A",
        thirdeye::policy::Rule::B => "B",
    };
    Ok(json!({
        "location": location,
        "client": host.to_string(),
        "access": decision.access.as_str(),
        "ordering": decision.ordering.as_str(),
        "rule": rule,
        "configured": snapshots.contains_key(location),
        "matched": decision.matched.iter().map(directive_json).collect::<Vec<_>>(),
    }))
}

/// Drives the simulated server with a generated workload, then validates
/// the resulting trace. An empty `hosts` lets the generator invent names.
pub fn simulate_and_validate_json(
    config: &str,
    hosts: &str,
    seed: u64,
    n: usize,
    mutation: &str,
) -> Result<Json, String> {
    let blocks = parse_config(config).map_err(|e| format!("config: {e}"))?;
    let base = parse_host_map(hosts).map_err(|e| format!("hosts: {e}"))?;
    let mutation = match mutation.trim() {
        "" | "none" => None,
        m => Some(m.parse::<Mutation>().map_err(|e| e.to_string())?),
    };
    let universe = HostUniverse::derive(&blocks, (!base.is_empty()).then_some(&base), seed);
    let workload = generate_workload(seed, &blocks, &universe, n);
    let (trace, _) = simulate_trace(config, &workload, mutation).map_err(|e| e.to_string())?;
    let report = validate_trace(&trace, &universe.hosts).map_err(|e| e.to_string())?;
    let summary = summarize(&trace);
    Ok(json!({
        "mutation": mutation.map(|m| m.id()),
        "trace": trace.to_text(),
        "hosts": render_host_map(&universe.hosts),
        "summary": summary.render_text(),
        "checked": report.checked,
        "passed": report.passed,
        "failed": report.failed,
        "violations": report.violations.iter().map(explain).collect::<Vec<_>>(),
    }))
}

/// Runs a query over trace text. `types` is comma separated; `predicates`
/// holds one `prop OP literal` per line.
pub fn query_trace_json(trace: &str, types: &str, predicates: &str) -> Result<Json, String> {
    let registry = access_registry();
    let trace = parse_trace(trace, &registry).map_err(|e| e.to_string())?;
    let mut query = Query::new();
    for ty in types.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        query = query.of_type(ty);
    }
    for line in predicates.lines().map(str::trim).filter(|l| !l.is_empty()) {
        query = query.filter(Predicate::parse(line).map_err(|e| e.to_string())?);
    }
    let hits = run_query(&trace, &query, &registry).map_err(|e| e.to_string())?;
    Ok(json!({
        "count": hits.len(),
        "records": hits.iter().map(|e| encode_event(e).trim_end().to_owned()).collect::<Vec<_>>(),
    }))
}

#[wasm_bindgen]
pub fn evaluate(config: &str, hosts: &str, location: &str, client: &str) -> String {
    to_string(evaluate_json(config, hosts, location, client))
}

#[wasm_bindgen]
pub fn simulate_and_validate(
    config: &str,
    hosts: &str,
    seed: u32,
    n: u32,
    mutation: &str,
) -> String {
    to_string(simulate_and_validate_json(
        config,
        hosts,
        seed.into(),
        n.min(10_000) as usize,
        mutation,
    ))
}

#[wasm_bindgen]
pub fn query_trace(trace: &str, types: &str, predicates: &str) -> String {
    to_string(query_trace_json(trace, types, predicates))
}

#[wasm_bindgen]
pub fn mutations() -> String {
    Json::from(Mutation::ALL.iter().map(|m| m.id()).collect::<Vec<_>>()).to_string()
}
