//! Typed execution-trace events, a filtering trace reporter, a trace store
//! with queries and reports, and a validator that checks logged access
//! decisions of a web server against Apache-style host access rules.

pub mod cli;
pub mod codec;
pub mod events;
pub mod glob;
pub mod harness;
pub mod policy;
pub mod runtime;
pub mod schema;
pub mod schema_file;
pub mod store;
pub mod validator;

pub use codec::{decode_record, encode_event};
pub use policy::{decide, parse_config, HostPattern, PolicySnapshot, RequestHost};
pub use runtime::{Runtime, TracingState};
pub use schema::{Event, EventType, Kind, SchemaRegistry, Value};
pub use store::{run_query, summarize, Query, Trace};
pub use validator::{explain, validate_trace};
