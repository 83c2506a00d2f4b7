//! The `thirdeye` command line.
//!
//! Exit codes: 0 success (and, for `validate`, no violations), 1 violations
//! found or a mutant went undetected, 2 usage or input error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::codec::encode_event;
use crate::events::ACCESS_SCHEMA;
use crate::harness::{generate_workload, run_mutants, simulate, HostUniverse, Mutation};
use crate::policy::{parse_config, Access};
use crate::runtime::{
    wallclock_epoch, Clock, MonotonicClock, Runtime, Sink, SinkSpec, StepClock, TracingState,
};
use crate::schema::SchemaRegistry;
use crate::schema_file::{parse_schema, SchemaFile};
use crate::store::{load_trace_file, run_query, summarize, Predicate, Query};
use crate::validator::{
    explain, parse_host_map, render_host_map, to_tsv_row, tsv_header, validate_location, HostMap,
};

#[derive(Debug, Parser)]
#[command(
    name = "thirdeye",
    version,
    about = "Trace, query and validate access-control event traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the simulated server over a config and a generated workload.
    Simulate(SimulateArgs),
    /// Check every logged access decision against the traced policy.
    Validate(ValidateArgs),
    /// Print the records matching a query.
    Query(QueryArgs),
    /// Summarize a trace.
    Report(ReportArgs),
    /// Run every fault-injected server variant and check each is caught.
    Mutants(MutantsArgs),
    /// Schema file utilities.
    Schema {
        #[command(subcommand)]
        command: SchemaCommand,
    },
    /// Receive a trace streamed to a tcp sink and store it in a file.
    Collect(CollectArgs),
}

#[derive(Debug, Subcommand)]
enum SchemaCommand {
    /// Parse a schema file and list its types and states.
    Check { file: PathBuf },
}

#[derive(Debug, clap::Args)]
struct WorkloadArgs {
    /// Access configuration with <Location> blocks.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of requests.
    #[arg(short = 'n', long = "requests", default_value_t = 50)]
    n: usize,
    /// Host map (`hostname ip` per line) naming the clients to use.
    #[arg(long)]
    hosts: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Write the trace to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// file:<path>, tcp:<host>:<port> or memory (printed to stdout).
    #[arg(long, env = "THIRDEYE_SINK")]
    sink: Option<String>,
    /// Tracing state to run in: access, requests or all.
    #[arg(long, env = "THIRDEYE_STATE")]
    state: Option<String>,
    /// Fault to inject into the server's access check.
    #[arg(long)]
    mutation: Option<String>,
    /// Write the host map the workload was drawn from.
    #[arg(long)]
    hosts_out: Option<PathBuf>,
    /// Use a deterministic clock (1 µs per event) instead of the monotonic one.
    #[arg(long)]
    step_clock: bool,
}

#[derive(Debug, clap::Args)]
struct ValidateArgs {
    trace: PathBuf,
    #[arg(long)]
    hosts: PathBuf,
    /// Only check requests for this location.
    #[arg(long)]
    location: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Schema file to read the trace with instead of the built-in access schema.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Tsv,
}

#[derive(Debug, clap::Args)]
struct QueryArgs {
    trace: PathBuf,
    #[arg(long = "type")]
    types: Vec<String>,
    /// `prop OP literal`, OP one of = != < <= > >= glob.
    #[arg(long = "where")]
    predicates: Vec<String>,
    #[arg(long)]
    from: Option<u64>,
    #[arg(long)]
    to: Option<u64>,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ReportArgs {
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    format: ReportFormat,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Kv,
    Both,
}

#[derive(Debug, clap::Args)]
struct MutantsArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
}

#[derive(Debug, clap::Args)]
struct CollectArgs {
    /// Address to listen on, e.g. 127.0.0.1:7000.
    #[arg(long)]
    listen: String,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("thirdeye: {e:#}");
            2
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_schema(path: Option<&Path>) -> Result<SchemaFile> {
    match path {
        Some(p) => Ok(parse_schema(&read(p)?, SchemaRegistry::with_builtins())
            .with_context(|| format!("schema {}", p.display()))?),
        None => {
            Ok(parse_schema(ACCESS_SCHEMA, SchemaRegistry::with_builtins())
                .expect("built-in schema"))
        }
    }
}

fn load_hosts(path: &Path) -> Result<HostMap> {
    parse_host_map(&read(path)?).with_context(|| format!("host map {}", path.display()))
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Query(args) => cmd_query(args),
        Command::Report(args) => cmd_report(args),
        Command::Mutants(args) => cmd_mutants(args),
        Command::Schema {
            command: SchemaCommand::Check { file },
        } => cmd_schema_check(&file),
        Command::Collect(args) => cmd_collect(args),
    }
}

struct Prepared {
    config_text: String,
    universe: HostUniverse,
    workload: crate::harness::Workload,
}

fn prepare(args: &WorkloadArgs) -> Result<Prepared> {
    if args.n == 0 {
        bail!("-n must be at least 1");
    }
    let config_text = read(&args.config)?;
    let blocks =
        parse_config(&config_text).with_context(|| format!("config {}", args.config.display()))?;
    let base = args.hosts.as_deref().map(load_hosts).transpose()?;
    let universe = HostUniverse::derive(&blocks, base.as_ref(), args.seed);
    let workload = generate_workload(args.seed, &blocks, &universe, args.n);
    Ok(Prepared {
        config_text,
        universe,
        workload,
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let prepared = prepare(&args.workload)?;
    let mutation = args
        .mutation
        .as_deref()
        .map(str::parse::<Mutation>)
        .transpose()?;
    let spec = match (&args.out, &args.sink) {
        (Some(path), _) => SinkSpec::File(path.clone()),
        (None, Some(s)) => s.parse()?,
        (None, None) => SinkSpec::Memory,
    };
    let (sink, memory) = match &spec {
        SinkSpec::Memory => {
            let (sink, buf) = Sink::memory();
            (sink, Some(buf))
        }
        other => (Sink::open(other)?, None),
    };
    let clock: Box<dyn Clock> = if args.step_clock {
        Box::new(StepClock::new(1_000, 1_000))
    } else {
        Box::new(MonotonicClock::new())
    };
    let schema = load_schema(None)?;
    let runtime = Runtime::new(schema.registry.clone(), sink, clock, &wallclock_epoch())?;
    if let Some(name) = &args.state {
        let state = match name.as_str() {
            "all" => TracingState::all(runtime.registry()),
            _ => schema
                .state(name)
                .cloned()
                .with_context(|| format!("unknown tracing state {name:?}"))?,
        };
        runtime.set_tracing_state(state)?;
    }
    let decisions = simulate(
        &prepared.config_text,
        &prepared.workload,
        mutation,
        &runtime,
    )?;
    let stats = runtime.stats();
    drop(runtime);

    if let Some(buf) = memory {
        io::stdout().write_all(&buf.lock().unwrap_or_else(|e| e.into_inner()))?;
    }
    if let Some(path) = &args.hosts_out {
        fs::write(path, render_host_map(&prepared.universe.hosts))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let granted = decisions.iter().filter(|a| **a == Access::Allowed).count();
    eprintln!(
        "simulated {} requests ({} granted, {} denied); {} events emitted, {} filtered",
        decisions.len(),
        granted,
        decisions.len() - granted,
        stats.emitted,
        stats.filtered
    );
    Ok(0)
}

fn cmd_validate(args: ValidateArgs) -> Result<i32> {
    let schema = load_schema(args.schema.as_deref())?;
    let hosts = load_hosts(&args.hosts)?;
    let trace = load_trace_file(&args.trace, &schema.registry)
        .with_context(|| format!("trace {}", args.trace.display()))?;
    let report = validate_location(&trace, &hosts, args.location.as_deref())?;
    let mut out = io::stdout().lock();
    match args.format {
        Format::Text => {
            for v in &report.violations {
                writeln!(out, "{}", explain(v))?;
            }
            writeln!(
                out,
                "checked={} passed={} failed={}",
                report.checked, report.passed, report.failed
            )?;
        }
        Format::Tsv => {
            out.write_all(tsv_header().as_bytes())?;
            for v in &report.violations {
                out.write_all(to_tsv_row(v).as_bytes())?;
            }
        }
    }
    Ok(if report.failed == 0 { 0 } else { 1 })
}

fn cmd_query(args: QueryArgs) -> Result<i32> {
    let schema = load_schema(args.schema.as_deref())?;
    let trace = load_trace_file(&args.trace, &schema.registry)
        .with_context(|| format!("trace {}", args.trace.display()))?;
    let mut query = Query::new();
    for t in &args.types {
        query = query.of_type(t);
    }
    for p in &args.predicates {
        query = query.filter(Predicate::parse(p)?);
    }
    if args.from.is_some() || args.to.is_some() {
        query = query.between(args.from.unwrap_or(0), args.to.unwrap_or(u64::MAX));
    }
    let mut out = io::stdout().lock();
    for event in run_query(&trace, &query, &schema.registry)? {
        out.write_all(encode_event(event).as_bytes())?;
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let schema = load_schema(args.schema.as_deref())?;
    let trace = load_trace_file(&args.trace, &schema.registry)
        .with_context(|| format!("trace {}", args.trace.display()))?;
    let report = summarize(&trace);
    let mut out = io::stdout().lock();
    match args.format {
        ReportFormat::Text => write!(out, "{}", report.render_text())?,
        ReportFormat::Kv => write!(out, "{}", report.render_kv())?,
        ReportFormat::Both => write!(out, "{}\n{}", report.render_text(), report.render_kv())?,
    }
    Ok(0)
}

fn cmd_mutants(args: MutantsArgs) -> Result<i32> {
    let prepared = prepare(&args.workload)?;
    let results = run_mutants(
        &prepared.config_text,
        &prepared.workload,
        &prepared.universe.hosts,
    )?;
    let mut out = io::stdout().lock();
    let mut all = true;
    for r in &results {
        all &= r.detected();
        writeln!(
            out,
            "{:<16} {:<10} violations={:<4} changed={:<4} {}",
            r.mutation.id(),
            if r.detected() { "detected" } else { "MISSED" },
            r.report.failed,
            r.decisions_changed,
            r.mutation.description()
        )?;
    }
    let detected = results.iter().filter(|r| r.detected()).count();
    writeln!(out, "{detected}/{} mutations detected", results.len())?;
    Ok(if all { 0 } else { 1 })
}

fn cmd_schema_check(path: &Path) -> Result<i32> {
    let schema = load_schema(Some(path))?;
    let mut out = io::stdout().lock();
    for name in schema.registry.type_names() {
        let props: Vec<String> = schema
            .registry
            .resolve(name)?
            .iter()
            .map(|p| format!("{}:{}", p.name, p.kind))
            .collect();
        writeln!(out, "type {name} ({})", props.join(", "))?;
    }
    for state in &schema.states {
        let types: Vec<&str> = state.enabled_types.iter().map(String::as_str).collect();
        writeln!(out, "state {} ({})", state.name, types.join(", "))?;
    }
    Ok(0)
}

fn cmd_collect(args: CollectArgs) -> Result<i32> {
    let listener =
        TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    let (mut stream, peer) = listener.accept()?;
    let mut file =
        fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let bytes = io::copy(&mut stream, &mut file)?;
    eprintln!("collected {bytes} bytes from {peer}");
    Ok(0)
}
