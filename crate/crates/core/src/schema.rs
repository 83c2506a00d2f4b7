//! Event schemas: typed properties, single inheritance, constructor defaults,
//! and the concrete [`Event`] instances that traces are made of.
//!
//! Every event type carries two implicit properties, `timestamp` and
//! `source_location`. They live in dedicated [`Event`] fields rather than in
//! the property map, but they are part of the resolved property list and may
//! not be redeclared.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

pub const TIMESTAMP: &str = "timestamp";
pub const SOURCE_LOCATION: &str = "source_location";

/// Built-in type emitted by the reporter whenever the tracing state changes.
pub const STATE_CHANGED: &str = "Tracing_state_changed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    String,
    Integer,
    Boolean,
    Timestamp,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::String => "string",
            Kind::Integer => "integer",
            Kind::Boolean => "boolean",
            Kind::Timestamp => "timestamp",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        match s {
            "string" => Some(Kind::String),
            "integer" => Some(Kind::Integer),
            "boolean" => Some(Kind::Boolean),
            "timestamp" => Some(Kind::Timestamp),
            _ => None,
        }
    }

    /// Parses the textual form of a value of this kind.
    pub fn parse_value(self, text: &str) -> Option<Value> {
        match self {
            Kind::String => Some(Value::Str(text.to_owned())),
            Kind::Integer => text.parse().ok().map(Value::Int),
            Kind::Boolean => match text {
                "true" => Some(Value::Bool(true)),
                "false" => Some(Value::Bool(false)),
                _ => None,
            },
            Kind::Timestamp => {
                // u64::from_str accepts a leading '+', which would break canonical form
                if text.starts_with('+') {
                    return None;
                }
                text.parse().ok().map(Value::Timestamp)
            }
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Str(String),
    Int(i64),
    Bool(bool),
    Timestamp(u64),
}

impl Value {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Str(_) => Kind::String,
            Value::Int(_) => Kind::Integer,
            Value::Bool(_) => Kind::Boolean,
            Value::Timestamp(_) => Kind::Timestamp,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Timestamp(t) => write!(f, "{t}"),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertySpec {
    pub name: String,
    pub kind: Kind,
    pub default: Option<Value>,
}

impl PropertySpec {
    pub fn new(name: impl Into<String>, kind: Kind) -> Self {
        PropertySpec {
            name: name.into(),
            kind,
            default: None,
        }
    }

    pub fn with_default(mut self, value: impl Into<Value>) -> Self {
        self.default = Some(value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventType {
    pub name: String,
    pub parent: Option<String>,
    pub properties: Vec<PropertySpec>,
}

impl EventType {
    pub fn new(name: impl Into<String>) -> Self {
        EventType {
            name: name.into(),
            parent: None,
            properties: Vec::new(),
        }
    }

    pub fn extends(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    pub fn property(mut self, spec: PropertySpec) -> Self {
        self.properties.push(spec);
        self
    }

    pub fn prop(self, name: &str, kind: Kind) -> Self {
        self.property(PropertySpec::new(name, kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("invalid identifier {0:?}")]
    InvalidName(String),
    #[error("event type {0} is already registered")]
    DuplicateTypeName(String),
    #[error("event type {ty} names unknown parent {parent}")]
    UnknownParent { ty: String, parent: String },
    #[error(
        "event type {ty} declares property {property} more than once or over an inherited one"
    )]
    DuplicateProperty { ty: String, property: String },
    #[error("event type {0} inherits from itself")]
    InheritanceCycle(String),
    #[error("default for {ty}.{property} is not a {kind}")]
    BadDefault {
        ty: String,
        property: String,
        kind: Kind,
    },
    #[error("unknown event type {0}")]
    UnknownType(String),
    #[error("{ty} requires property {property}")]
    MissingProperty { ty: String, property: String },
    #[error("{ty}.{property} expects {expected}, got {found}")]
    TypeMismatch {
        ty: String,
        property: String,
        expected: Kind,
        found: Kind,
    },
    #[error("{ty} has no property {property}")]
    UnknownProperty { ty: String, property: String },
}

/// Checks `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn implicit_properties() -> [PropertySpec; 2] {
    [
        PropertySpec::new(TIMESTAMP, Kind::Timestamp),
        PropertySpec::new(SOURCE_LOCATION, Kind::String),
    ]
}

/// The set of known event types. Parents must be registered before children.
#[derive(Debug, Clone, Default)]
pub struct SchemaRegistry {
    types: BTreeMap<String, EventType>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        SchemaRegistry::default()
    }

    /// A registry holding only the reporter's built-in types.
    pub fn with_builtins() -> Self {
        let mut registry = SchemaRegistry::new();
        registry
            .register(builtin_state_changed())
            .expect("built-in schema is well formed");
        registry
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&EventType> {
        self.types.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.types.contains_key(name)
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    pub fn register(&mut self, ty: EventType) -> Result<(), SchemaError> {
        if !is_identifier(&ty.name) {
            return Err(SchemaError::InvalidName(ty.name));
        }
        if self.types.contains_key(&ty.name) {
            return Err(SchemaError::DuplicateTypeName(ty.name));
        }
        if let Some(parent) = &ty.parent {
            if parent == &ty.name {
                return Err(SchemaError::InheritanceCycle(ty.name));
            }
            if !self.types.contains_key(parent) {
                return Err(SchemaError::UnknownParent {
                    ty: ty.name.clone(),
                    parent: parent.clone(),
                });
            }
        }
        let inherited = match &ty.parent {
            Some(parent) => self.resolve(parent)?,
            None => implicit_properties().to_vec(),
        };
        let mut seen: Vec<&str> = inherited.iter().map(|p| p.name.as_str()).collect();
        for prop in &ty.properties {
            if !is_identifier(&prop.name) {
                return Err(SchemaError::InvalidName(prop.name.clone()));
            }
            if seen.contains(&prop.name.as_str()) {
                return Err(SchemaError::DuplicateProperty {
                    ty: ty.name.clone(),
                    property: prop.name.clone(),
                });
            }
            seen.push(&prop.name);
            if let Some(default) = &prop.default {
                if default.kind() != prop.kind {
                    return Err(SchemaError::BadDefault {
                        ty: ty.name.clone(),
                        property: prop.name.clone(),
                        kind: prop.kind,
                    });
                }
            }
        }
        self.types.insert(ty.name.clone(), ty);
        Ok(())
    }

    /// Full property list of a type: the two implicit properties, then
    /// ancestors root first, then the type's own declarations.
    pub fn resolve(&self, name: &str) -> Result<Vec<PropertySpec>, SchemaError> {
        let chain = self.ancestry(name)?;
        let mut props = implicit_properties().to_vec();
        for ty in chain.iter().rev() {
            props.extend(ty.properties.iter().cloned());
        }
        Ok(props)
    }

    /// Like [`resolve`](Self::resolve) without the implicit properties: the
    /// keys that appear in an event's property map, in canonical order.
    pub fn explicit_properties(&self, name: &str) -> Result<Vec<PropertySpec>, SchemaError> {
        let mut props = self.resolve(name)?;
        props.drain(..2);
        Ok(props)
    }

    /// The type followed by its ancestors, nearest first.
    pub fn ancestry(&self, name: &str) -> Result<Vec<&EventType>, SchemaError> {
        let mut chain = Vec::new();
        let mut cursor = Some(name);
        while let Some(current) = cursor {
            let ty = self
                .types
                .get(current)
                .ok_or_else(|| SchemaError::UnknownType(current.to_owned()))?;
            chain.push(ty);
            cursor = ty.parent.as_deref();
        }
        Ok(chain)
    }

    /// True if `name` is `ancestor` or inherits from it.
    pub fn is_a(&self, name: &str, ancestor: &str) -> bool {
        self.ancestry(name)
            .map(|chain| chain.iter().any(|t| t.name == ancestor))
            .unwrap_or(false)
    }

    pub fn property_kind(&self, type_name: &str, property: &str) -> Option<Kind> {
        self.resolve(type_name)
            .ok()?
            .into_iter()
            .find(|p| p.name == property)
            .map(|p| p.kind)
    }

    pub fn construct_event(
        &self,
        type_name: &str,
        explicit: impl IntoIterator<Item = (String, Value)>,
        timestamp: u64,
        source_location: &str,
    ) -> Result<Event, SchemaError> {
        let specs = self.explicit_properties(type_name)?;
        let mut supplied: IndexMap<String, Value> = explicit.into_iter().collect();
        let mut properties = IndexMap::with_capacity(specs.len());
        for spec in &specs {
            let value = match supplied.shift_remove(&spec.name) {
                Some(v) => v,
                None => match &spec.default {
                    Some(d) => d.clone(),
                    None => {
                        return Err(SchemaError::MissingProperty {
                            ty: type_name.to_owned(),
                            property: spec.name.clone(),
                        })
                    }
                },
            };
            if value.kind() != spec.kind {
                return Err(SchemaError::TypeMismatch {
                    ty: type_name.to_owned(),
                    property: spec.name.clone(),
                    expected: spec.kind,
                    found: value.kind(),
                });
            }
            properties.insert(spec.name.clone(), value);
        }
        if let Some((name, _)) = supplied.into_iter().next() {
            return Err(SchemaError::UnknownProperty {
                ty: type_name.to_owned(),
                property: name,
            });
        }
        Ok(Event {
            type_name: type_name.to_owned(),
            seq: 0,
            timestamp,
            source_location: source_location.to_owned(),
            properties,
        })
    }

    /// Checks an event against its resolved schema, listing every problem.
    pub fn validate_event(&self, event: &Event) -> Result<(), Vec<SchemaError>> {
        let specs = match self.explicit_properties(&event.type_name) {
            Ok(specs) => specs,
            Err(e) => return Err(vec![e]),
        };
        let ty = &event.type_name;
        let mut errors = Vec::new();
        for spec in &specs {
            match event.properties.get(&spec.name) {
                None => errors.push(SchemaError::MissingProperty {
                    ty: ty.clone(),
                    property: spec.name.clone(),
                }),
                Some(v) if v.kind() != spec.kind => errors.push(SchemaError::TypeMismatch {
                    ty: ty.clone(),
                    property: spec.name.clone(),
                    expected: spec.kind,
                    found: v.kind(),
                }),
                Some(_) => {}
            }
        }
        for name in event.properties.keys() {
            if !specs.iter().any(|s| &s.name == name) {
                errors.push(SchemaError::UnknownProperty {
                    ty: ty.clone(),
                    property: name.clone(),
                });
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

fn builtin_state_changed() -> EventType {
    EventType::new(STATE_CHANGED)
        .prop("state", Kind::String)
        .prop("enabled", Kind::String)
}

/// One occurrence of an event type.
///
/// `properties` holds the non-implicit properties in the schema's resolved
/// order when built by [`SchemaRegistry::construct_event`] or decoded from a
/// trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub type_name: String,
    pub seq: u64,
    pub timestamp: u64,
    pub source_location: String,
    pub properties: IndexMap<String, Value>,
}

impl Event {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.properties.get(name)
    }

    pub fn get_str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(Value::as_str)
    }

    pub fn get_int(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(Value::as_int)
    }

    /// Property lookup that also sees the implicit properties.
    pub fn lookup(&self, name: &str) -> Option<Value> {
        match name {
            TIMESTAMP => Some(Value::Timestamp(self.timestamp)),
            SOURCE_LOCATION => Some(Value::Str(self.source_location.clone())),
            _ => self.properties.get(name).cloned(),
        }
    }
}

/// Builds an explicit-property list for [`SchemaRegistry::construct_event`].
#[macro_export]
macro_rules! props {
    () => { ::std::vec::Vec::<(::std::string::String, $crate::schema::Value)>::new() };
    ($($key:literal => $value:expr),+ $(,)?) => {
        vec![$(($key.to_string(), $crate::schema::Value::from($value))),+]
    };
}
