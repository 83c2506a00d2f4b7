//! The access-control event family reported by an instrumented web server.

use crate::schema::{EventType, Kind, SchemaRegistry};

pub const ACCESS_ORDER: &str = "Access_order";
pub const ACCESS_ALLOW: &str = "Access_allow";
pub const ACCESS_REQUEST: &str = "Access_request";

/// Denial code the simulated server logs; any non-zero code means denied.
pub const DENIED_CODE: i64 = 403;

/// Schema-file form of [`access_registry`], plus a tracing state enabling it.
pub const ACCESS_SCHEMA: &str = "\
# Ordering directive read for a location.
type Access_order { location:string, ordering:string }
# One host of an Allow/Deny directive; directive is `allow` or `deny`.
type Access_allow { location:string, host:string, directive:string }
# A served request. `request` is the client followed by the quoted request
# line, e.g. `goodguys.org \"GET /private/x.html HTTP/1.0\"`.
type Access_request { location:string, request:string, access_code:integer, uri:string }
state access { Access_order, Access_allow, Access_request }
state requests { Access_request }
";

/// Built-ins plus the three access event types.
pub fn access_registry() -> SchemaRegistry {
    let mut reg = SchemaRegistry::with_builtins();
    for ty in [
        EventType::new(ACCESS_ORDER)
            .prop("location", Kind::String)
            .prop("ordering", Kind::String),
        EventType::new(ACCESS_ALLOW)
            .prop("location", Kind::String)
            .prop("host", Kind::String)
            .prop("directive", Kind::String),
        EventType::new(ACCESS_REQUEST)
            .prop("location", Kind::String)
            .prop("request", Kind::String)
            .prop("access_code", Kind::Integer)
            .prop("uri", Kind::String),
    ] {
        reg.register(ty).expect("access schema is well formed");
    }
    reg
}

/// Formats the `request` property: client, then the quoted request line.
pub fn request_record(client: &str, method: &str, uri: &str) -> String {
    format!("{client} \"{method} {uri} HTTP/1.0\"")
}

/// The client token at the head of a `request` property.
pub fn request_client(record: &str) -> Option<&str> {
    let (client, rest) = record.split_once(' ')?;
    if client.is_empty() || !rest.starts_with('"') {
        return None;
    }
    Some(client)
}
