use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::event::{CaseId, LifecycleState, ModelId, Payload, RawExecutionEvent, Scalar, Timestamp};

/// A cell value in a stream record or table row.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Dec(f64),
    Str(String),
    Map(BTreeMap<String, Value>),
}

pub type Row = BTreeMap<String, Value>;

pub fn row_to_json(r: &Row) -> serde_json::Value {
    serde_json::Value::Object(r.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

impl Value {
    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Int(_) => "integer",
            Value::Dec(_) => "decimal",
            Value::Str(_) => "string",
            Value::Map(_) => "map",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Dec(_) => 2,
            Value::Str(_) => 3,
            Value::Map(_) => 4,
        }
    }

    /// True when the two values may be compared in a guard.
    pub fn comparable(&self, other: &Value) -> bool {
        self.is_null() || other.is_null() || self.rank() == other.rank()
    }

    pub fn to_scalar(&self) -> Option<Scalar> {
        match self {
            Value::Bool(b) => Some(Scalar::Bool(*b)),
            Value::Int(i) => Some(Scalar::Int(*i)),
            Value::Dec(d) => Some(Scalar::Decimal(*d)),
            Value::Str(s) => Some(Scalar::Str(s.clone())),
            Value::Null | Value::Map(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as Json;
        match self {
            Value::Null => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::from(*i),
            Value::Dec(d) => serde_json::Number::from_f64(*d).map_or(Json::Null, Json::Number),
            Value::Str(s) => Json::String(s.clone()),
            Value::Map(m) => Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
        }
    }

    /// Converts a map value to a payload, dropping non-scalar entries.
    pub fn to_payload(&self) -> Payload {
        self.as_map()
            .map(|m| {
                m.iter()
                    .filter_map(|(k, v)| v.to_scalar().map(|s| (k.clone(), s)))
                    .collect()
            })
            .unwrap_or_default()
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Int(a), Value::Dec(b)) => (*a as f64).total_cmp(b),
            (Value::Dec(a), Value::Int(b)) => a.total_cmp(&(*b as f64)),
            (Value::Dec(a), Value::Dec(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Map(a), Value::Map(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Dec(d) => write!(f, "{}", Scalar::Decimal(*d)),
            Value::Str(s) => f.write_str(s),
            Value::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{k}={v};")?;
                }
                f.write_str("}")
            }
        }
    }
}

impl From<&Scalar> for Value {
    fn from(s: &Scalar) -> Self {
        match s {
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Int(i) => Value::Int(*i),
            Scalar::Decimal(d) => Value::Dec(*d),
            Scalar::Str(s) => Value::Str(s.clone()),
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

pub fn payload_value(p: &Payload) -> Value {
    Value::Map(p.iter().map(|(k, v)| (k.clone(), Value::from(v))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Bool,
    Int,
    Dec,
    Str,
    Map,
    Any,
}

impl FieldType {
    pub fn admits(self, v: &Value) -> bool {
        match (self, v) {
            (_, Value::Null) | (FieldType::Any, _) => true,
            (FieldType::Bool, Value::Bool(_))
            | (FieldType::Int, Value::Int(_))
            | (FieldType::Str, Value::Str(_))
            | (FieldType::Map, Value::Map(_)) => true,
            (FieldType::Dec, Value::Dec(_) | Value::Int(_)) => true,
            _ => false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldType::Bool => "boolean",
            FieldType::Int => "integer",
            FieldType::Dec => "decimal",
            FieldType::Str => "string",
            FieldType::Map => "map",
            FieldType::Any => "any",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaKind {
    Stream,
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDef {
    pub name: String,
    pub fields: Vec<(String, FieldType)>,
    pub keys: Vec<String>,
    pub kind: SchemaKind,
}

impl SchemaDef {
    pub fn stream(name: &str, fields: &[(&str, FieldType)]) -> Self {
        SchemaDef {
            name: name.into(),
            fields: fields.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
            keys: Vec::new(),
            kind: SchemaKind::Stream,
        }
    }

    pub fn table(name: &str, fields: &[(&str, FieldType)], keys: &[&str]) -> Self {
        SchemaDef {
            name: name.into(),
            fields: fields.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
            keys: keys.iter().map(|k| k.to_string()).collect(),
            kind: SchemaKind::Table,
        }
    }

    pub fn field_type(&self, name: &str) -> Option<FieldType> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.field_type(name).is_some()
    }

    pub fn key_of(&self, row: &Row) -> Vec<Value> {
        self.keys
            .iter()
            .map(|k| row.get(k).cloned().unwrap_or(Value::Null))
            .collect()
    }
}

pub const PROCESS_FIELDS: [(&str, FieldType); 6] = [
    ("pmID", FieldType::Int),
    ("caseID", FieldType::Int),
    ("nodeID", FieldType::Str),
    ("state", FieldType::Str),
    ("payload", FieldType::Map),
    ("ts", FieldType::Int),
];

/// Schema of a stream carrying raw execution events.
pub fn process_stream_schema(name: &str) -> SchemaDef {
    SchemaDef::stream(name, &PROCESS_FIELDS)
}

pub fn event_to_row(e: &RawExecutionEvent) -> Row {
    let mut r = Row::new();
    r.insert("pmID".into(), Value::from(e.model.0));
    r.insert("caseID".into(), Value::from(e.case.0));
    r.insert("nodeID".into(), Value::from(e.node.as_str()));
    r.insert("state".into(), Value::from(e.state.as_str()));
    r.insert("payload".into(), payload_value(&e.payload));
    r.insert("ts".into(), Value::from(e.ts.0));
    r
}

pub fn row_to_event(r: &Row) -> Option<RawExecutionEvent> {
    let uint = |k: &str| r.get(k).and_then(Value::as_int).and_then(|i| u64::try_from(i).ok());
    Some(RawExecutionEvent {
        model: ModelId(uint("pmID")?),
        case: CaseId(uint("caseID")?),
        node: r.get("nodeID")?.as_str()?.to_string(),
        state: r.get("state")?.as_str()?.parse::<LifecycleState>().ok()?,
        payload: r.get("payload").map(Value::to_payload).unwrap_or_default(),
        ts: Timestamp(uint("ts")?),
    })
}
