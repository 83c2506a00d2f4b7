//! The in-process reporter: filters reports through the current tracing
//! state, stamps survivors with a sequence number and timestamp, and appends
//! their encoded records to a sink.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use thiserror::Error;

use crate::codec;
use crate::schema::{SchemaError, SchemaRegistry, Value, STATE_CHANGED};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("tracing state {state} names unregistered event type {ty}")]
    UnknownEventTypeInState { state: String, ty: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("sink i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad sink spec {0:?}; expected file:<path>, tcp:<host>:<port> or memory")]
    BadSinkSpec(String),
}

/// A named set of enabled event types. A type is enabled when it or one of
/// its ancestors is listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracingState {
    pub name: String,
    pub enabled_types: BTreeSet<String>,
}

impl TracingState {
    pub fn new<I, S>(name: impl Into<String>, types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TracingState {
            name: name.into(),
            enabled_types: types.into_iter().map(Into::into).collect(),
        }
    }

    /// Enables every type registered in `registry`.
    pub fn all(registry: &SchemaRegistry) -> Self {
        TracingState::new("all", registry.type_names())
    }

    pub fn check(&self, registry: &SchemaRegistry) -> Result<(), RuntimeError> {
        match self.enabled_types.iter().find(|t| !registry.contains(t)) {
            Some(ty) => Err(RuntimeError::UnknownEventTypeInState {
                state: self.name.clone(),
                ty: ty.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn enables(&self, registry: &SchemaRegistry, type_name: &str) -> bool {
        match registry.ancestry(type_name) {
            Ok(chain) => chain.iter().any(|t| self.enabled_types.contains(&t.name)),
            Err(_) => false,
        }
    }
}

/// Source of event timestamps in nanoseconds.
pub trait Clock: Send {
    fn now_ns(&mut self) -> u64;
}

/// Nanoseconds elapsed since the clock was created.
#[derive(Debug)]
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&mut self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

/// Deterministic clock: each reading advances by a fixed step.
#[derive(Debug, Clone)]
pub struct StepClock {
    next: u64,
    step: u64,
}

impl StepClock {
    pub fn new(start: u64, step: u64) -> Self {
        StepClock { next: start, step }
    }
}

impl Clock for StepClock {
    fn now_ns(&mut self) -> u64 {
        let now = self.next;
        self.next += self.step;
        now
    }
}

/// Where records go, as written in `THIRDEYE_SINK`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkSpec {
    File(PathBuf),
    Tcp(String),
    Memory,
}

impl FromStr for SinkSpec {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "memory" {
            return Ok(SinkSpec::Memory);
        }
        if let Some(path) = s.strip_prefix("file:").filter(|p| !p.is_empty()) {
            return Ok(SinkSpec::File(PathBuf::from(path)));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            if let Some((host, port)) = addr.rsplit_once(':') {
                if !host.is_empty() && port.parse::<u16>().is_ok() {
                    return Ok(SinkSpec::Tcp(addr.to_owned()));
                }
            }
        }
        Err(RuntimeError::BadSinkSpec(s.to_owned()))
    }
}

/// Shared handle onto a memory sink's bytes.
pub type MemoryBuffer = Arc<Mutex<Vec<u8>>>;

/// Append-only destination for encoded records.
pub enum Sink {
    File(BufWriter<File>),
    Tcp(BufWriter<TcpStream>),
    Memory(MemoryBuffer),
}

impl Sink {
    pub fn open(spec: &SinkSpec) -> Result<Sink, RuntimeError> {
        Ok(match spec {
            SinkSpec::File(path) => Sink::File(BufWriter::new(File::create(path)?)),
            SinkSpec::Tcp(addr) => Sink::Tcp(BufWriter::new(TcpStream::connect(addr)?)),
            SinkSpec::Memory => Sink::memory().0,
        })
    }

    pub fn memory() -> (Sink, MemoryBuffer) {
        let buf = MemoryBuffer::default();
        (Sink::Memory(buf.clone()), buf)
    }

    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self {
            Sink::File(w) => w.write_all(bytes),
            Sink::Tcp(w) => w.write_all(bytes),
            Sink::Memory(buf) => {
                buf.lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .extend_from_slice(bytes);
                Ok(())
            }
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Sink::File(w) => w.flush(),
            Sink::Tcp(w) => w.flush(),
            Sink::Memory(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TypeCounts {
    pub emitted: u64,
    pub filtered: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReporterStats {
    pub attempts: u64,
    pub emitted: u64,
    pub filtered: u64,
    pub per_type: BTreeMap<String, TypeCounts>,
}

impl ReporterStats {
    pub fn balanced(&self) -> bool {
        self.emitted + self.filtered == self.attempts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Emitted { seq: u64 },
    Filtered,
}

struct Inner {
    state: TracingState,
    clock: Box<dyn Clock>,
    sink: Sink,
    last_seq: u64,
    last_timestamp: u64,
    stats: ReporterStats,
}

/// Reporter handle. `report` may be called from several threads; one lock
/// owns sequence assignment, the clock and sink writes, so records land in
/// seq order and every report observes exactly one tracing state.
pub struct Runtime {
    registry: Arc<SchemaRegistry>,
    inner: Mutex<Inner>,
}

impl Runtime {
    /// Starts in the `all` tracing state and writes the trace header.
    /// The built-in state-change type is registered if missing.
    pub fn new(
        mut registry: SchemaRegistry,
        mut sink: Sink,
        clock: Box<dyn Clock>,
        epoch: &str,
    ) -> Result<Runtime, RuntimeError> {
        if !registry.contains(STATE_CHANGED) {
            let builtins = SchemaRegistry::with_builtins();
            registry.register(builtins.get(STATE_CHANGED).cloned().expect("built-in"))?;
        }
        sink.write_all(codec::header_line(epoch).as_bytes())?;
        let state = TracingState::all(&registry);
        Ok(Runtime {
            registry: Arc::new(registry),
            inner: Mutex::new(Inner {
                state,
                clock,
                sink,
                last_seq: 0,
                last_timestamp: 0,
                stats: ReporterStats::default(),
            }),
        })
    }

    /// Memory-backed runtime with the current wall clock as epoch.
    pub fn in_memory(
        registry: SchemaRegistry,
        clock: Box<dyn Clock>,
    ) -> Result<(Runtime, MemoryBuffer), RuntimeError> {
        let (sink, buf) = Sink::memory();
        let rt = Runtime::new(registry, sink, clock, &wallclock_epoch())?;
        Ok((rt, buf))
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.registry
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn state(&self) -> TracingState {
        self.lock().state.clone()
    }

    pub fn stats(&self) -> ReporterStats {
        self.lock().stats.clone()
    }

    /// Switches the tracing state and records the switch as a built-in
    /// event, which is never filtered.
    pub fn set_tracing_state(&self, state: TracingState) -> Result<(), RuntimeError> {
        state.check(&self.registry)?;
        let enabled = state
            .enabled_types
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",");
        let props = vec![
            ("state".to_owned(), Value::from(state.name.as_str())),
            ("enabled".to_owned(), Value::from(enabled)),
        ];
        let mut inner = self.lock();
        inner.state = state;
        self.emit(&mut inner, STATE_CHANGED, props, "tracer")?;
        Ok(())
    }

    pub fn report(
        &self,
        type_name: &str,
        props: Vec<(String, Value)>,
        source_location: &str,
    ) -> Result<Outcome, RuntimeError> {
        if !self.registry.contains(type_name) {
            return Err(SchemaError::UnknownType(type_name.to_owned()).into());
        }
        let mut inner = self.lock();
        if !inner.state.enables(&self.registry, type_name) {
            inner.stats.attempts += 1;
            inner.stats.filtered += 1;
            inner
                .stats
                .per_type
                .entry(type_name.to_owned())
                .or_default()
                .filtered += 1;
            return Ok(Outcome::Filtered);
        }
        self.emit(&mut inner, type_name, props, source_location)
    }

    fn emit(
        &self,
        inner: &mut Inner,
        type_name: &str,
        props: Vec<(String, Value)>,
        source_location: &str,
    ) -> Result<Outcome, RuntimeError> {
        inner.stats.attempts += 1;
        // a rejected construction is neither emitted nor filtered
        let mut event = match self
            .registry
            .construct_event(type_name, props, 0, source_location)
        {
            Ok(event) => event,
            Err(e) => {
                inner.stats.attempts -= 1;
                return Err(e.into());
            }
        };
        let now = inner.clock.now_ns().max(inner.last_timestamp);
        event.seq = inner.last_seq + 1;
        event.timestamp = now;
        inner
            .sink
            .write_all(codec::encode_event(&event).as_bytes())?;
        inner.last_seq = event.seq;
        inner.last_timestamp = now;
        inner.stats.emitted += 1;
        inner
            .stats
            .per_type
            .entry(type_name.to_owned())
            .or_default()
            .emitted += 1;
        Ok(Outcome::Emitted { seq: event.seq })
    }

    pub fn flush(&self) -> Result<(), RuntimeError> {
        self.lock().sink.flush()?;
        Ok(())
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        let _ = self.lock().sink.flush();
    }
}

/// Current wall-clock time, RFC 3339 with second precision.
pub fn wallclock_epoch() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::props;
    use crate::schema::{EventType, Kind};

    fn registry() -> SchemaRegistry {
        let mut reg = SchemaRegistry::new();
        reg.register(
            EventType::new("Access_request")
                .prop("location", Kind::String)
                .prop("access_code", Kind::Integer),
        )
        .unwrap();
        reg.register(EventType::new("Access_order").prop("location", Kind::String))
            .unwrap();
        reg
    }

    fn runtime() -> (Runtime, MemoryBuffer) {
        let (sink, buf) = Sink::memory();
        let rt = Runtime::new(
            registry(),
            sink,
            Box::new(StepClock::new(1000, 10)),
            "2026-10-16T09:00:00Z",
        )
        .unwrap();
        (rt, buf)
    }

    fn request() -> Vec<(String, Value)> {
        props!["location" => "/p", "access_code" => 0i64]
    }

    #[test]
    fn emits_with_consecutive_seq() {
        let (rt, buf) = runtime();
        assert_eq!(
            rt.report("Access_request", request(), "srv").unwrap(),
            Outcome::Emitted { seq: 1 }
        );
        assert_eq!(
            rt.report("Access_request", request(), "srv").unwrap(),
            Outcome::Emitted { seq: 2 }
        );
        let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "thirdeye-trace v1 epoch=2026-10-16T09:00:00Z");
        assert_eq!(
            lines[1],
            "1\t1000\tAccess_request\tsrv\tlocation=/p;access_code=0"
        );
        assert_eq!(
            lines[2],
            "2\t1010\tAccess_request\tsrv\tlocation=/p;access_code=0"
        );
    }

    #[test]
    fn filtered_reports_leave_sink_untouched() {
        let (rt, buf) = runtime();
        rt.set_tracing_state(TracingState::new("orders", ["Access_order"]))
            .unwrap();
        let before = buf.lock().unwrap().len();
        assert_eq!(
            rt.report("Access_request", request(), "srv").unwrap(),
            Outcome::Filtered
        );
        assert_eq!(buf.lock().unwrap().len(), before);
        // filtered reports are never constructed, so bad props go unnoticed
        assert_eq!(
            rt.report("Access_request", props![], "srv").unwrap(),
            Outcome::Filtered
        );
        let stats = rt.stats();
        assert_eq!(stats.filtered, 2);
        assert_eq!(stats.per_type["Access_request"].filtered, 2);
        assert!(stats.balanced());
    }

    #[test]
    fn empty_state_filters_everything_but_builtins() {
        let (rt, buf) = runtime();
        rt.set_tracing_state(TracingState::new("quiet", Vec::<String>::new()))
            .unwrap();
        rt.report("Access_order", props!["location" => "/p"], "cfg")
            .unwrap();
        let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("Tracing_state_changed\ttracer\tstate=quiet;enabled="));
        assert_eq!(rt.stats().filtered, 1);
    }

    #[test]
    fn state_must_name_registered_types() {
        let (rt, _) = runtime();
        assert!(matches!(
            rt.set_tracing_state(TracingState::new("bad", ["Nope"])),
            Err(RuntimeError::UnknownEventTypeInState { .. })
        ));
    }

    #[test]
    fn enabled_report_surfaces_schema_errors() {
        let (rt, _) = runtime();
        let err = rt
            .report("Access_request", props!["location" => "/p"], "srv")
            .unwrap_err();
        assert!(matches!(
            err,
            RuntimeError::Schema(SchemaError::MissingProperty { .. })
        ));
        assert!(rt.stats().balanced());
        assert!(matches!(
            rt.report("Unknown", props![], "srv"),
            Err(RuntimeError::Schema(SchemaError::UnknownType(_)))
        ));
    }

    #[test]
    fn child_types_follow_their_ancestors() {
        let mut reg = registry();
        reg.register(EventType::new("Access_request_v2").extends("Access_request"))
            .unwrap();
        let state = TracingState::new("req", ["Access_request"]);
        assert!(state.enables(&reg, "Access_request_v2"));
        assert!(!state.enables(&reg, "Access_order"));
    }

    #[test]
    fn sink_specs() {
        assert_eq!("memory".parse::<SinkSpec>().unwrap(), SinkSpec::Memory);
        assert_eq!(
            "file:/tmp/t.trace".parse::<SinkSpec>().unwrap(),
            SinkSpec::File("/tmp/t.trace".into())
        );
        assert_eq!(
            "tcp:127.0.0.1:7000".parse::<SinkSpec>().unwrap(),
            SinkSpec::Tcp("127.0.0.1:7000".into())
        );
        for bad in ["file:", "tcp:host", "tcp:host:port", "udp:x", ""] {
            assert!(bad.parse::<SinkSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn concurrent_reports_stay_gap_free() {
        let (rt, buf) = runtime();
        let rt = Arc::new(rt);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let rt = rt.clone();
                std::thread::spawn(move || {
                    for _ in 0..50 {
                        rt.report("Access_request", request(), "t").unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
        let seqs: Vec<u64> = text
            .lines()
            .skip(1)
            .map(|l| l.split('\t').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(seqs, (1..=200).collect::<Vec<_>>());
    }
}
