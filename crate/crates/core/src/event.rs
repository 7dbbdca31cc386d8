//! Execution events, lifecycle states and their wire encodings.
//!
//! Every module in the crate talks in terms of [`RawExecutionEvent`]: one
//! lifecycle change of one node in one case of one model. The canonical wire
//! form is a single-line JSON object with the fields `pmID`, `caseID`,
//! `nodeID`, `state`, `payload` and `ts`, in that order. A human-readable CSV
//! line form is provided for logs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value as Json};
use thiserror::Error;

/// Identifier of a deployed process model.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ModelId(pub u64);

/// Identifier of a process instance.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CaseId(pub u64);

/// Milliseconds since the epoch.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The three-state node lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleState {
    Started,
    Completed,
    Skipped,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 3] = [Self::Started, Self::Completed, Self::Skipped];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Started => "started",
            Self::Completed => "completed",
            Self::Skipped => "skipped",
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LifecycleState {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "started" => Ok(Self::Started),
            "completed" => Ok(Self::Completed),
            "skipped" => Ok(Self::Skipped),
            other => Err(DecodeError::UnknownState(other.to_string())),
        }
    }
}

/// A payload or case-variable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Decimal(f64),
    Str(String),
}

impl Scalar {
    pub fn type_name(&self) -> &'static str {
        match self {
            Scalar::Bool(_) => "boolean",
            Scalar::Int(_) => "integer",
            Scalar::Decimal(_) => "decimal",
            Scalar::Str(_) => "string",
        }
    }

    /// Parses the unquoted value syntax used by CSV lines and `key=value`
    /// prompts: booleans, integers, decimals, and anything else as a string.
    pub fn parse_loose(text: &str) -> Scalar {
        let t = text.trim();
        match t {
            "true" => return Scalar::Bool(true),
            "false" => return Scalar::Bool(false),
            _ => {}
        }
        if let Ok(i) = t.parse::<i64>() {
            return Scalar::Int(i);
        }
        if t.contains('.') {
            if let Ok(d) = t.parse::<f64>() {
                if d.is_finite() {
                    return Scalar::Decimal(d);
                }
            }
        }
        Scalar::Str(t.to_string())
    }

    fn to_json(&self) -> Json {
        match self {
            Scalar::Bool(b) => Json::Bool(*b),
            Scalar::Int(i) => Json::Number((*i).into()),
            // Non-finite decimals are rejected at construction sites that
            // accept external input; map them to null rather than panic.
            Scalar::Decimal(d) => Number::from_f64(*d).map_or(Json::Null, Json::Number),
            Scalar::Str(s) => Json::String(s.clone()),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Decimal(d) => {
                if d.fract() == 0.0 && d.abs() < 1e15 {
                    write!(f, "{d:.1}")
                } else {
                    write!(f, "{d}")
                }
            }
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Decimal(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

/// Ordered key-value map of scalars.
pub type Payload = BTreeMap<String, Scalar>;

/// Builds a payload from `(key, value)` pairs.
pub fn payload<K, V, I>(pairs: I) -> Payload
where
    K: Into<String>,
    V: Into<Scalar>,
    I: IntoIterator<Item = (K, V)>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

/// A single lifecycle change of one node in one case.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExecutionEvent {
    pub model: ModelId,
    pub case: CaseId,
    pub node: String,
    pub state: LifecycleState,
    pub payload: Payload,
    pub ts: Timestamp,
}

impl RawExecutionEvent {
    pub fn new(
        model: ModelId,
        case: CaseId,
        node: impl Into<String>,
        state: LifecycleState,
        payload: Payload,
        ts: Timestamp,
    ) -> Self {
        Self {
            model,
            case,
            node: node.into(),
            state,
            payload,
            ts,
        }
    }

    pub fn started(model: u64, case: u64, node: &str, ts: u64) -> Self {
        Self::new(
            ModelId(model),
            CaseId(case),
            node,
            LifecycleState::Started,
            Payload::new(),
            Timestamp(ts),
        )
    }

    pub fn completed(model: u64, case: u64, node: &str, ts: u64) -> Self {
        Self::new(
            ModelId(model),
            CaseId(case),
            node,
            LifecycleState::Completed,
            Payload::new(),
            Timestamp(ts),
        )
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }
}

impl fmt::Display for RawExecutionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({},{},{})",
            self.state, self.node, self.case, self.ts
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed event: {0}")]
    Syntax(String),
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("unknown lifecycle state {0:?}")]
    UnknownState(String),
}

impl DecodeError {
    /// Name of the offending field, when the error is tied to one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            DecodeError::MissingField(f) | DecodeError::InvalidField { field: f, .. } => Some(f),
            DecodeError::UnknownState(_) => Some("state"),
            DecodeError::Syntax(_) => None,
        }
    }
}

/// Canonical single-line JSON encoding of an event.
pub fn encode_event(e: &RawExecutionEvent) -> Vec<u8> {
    encode_event_string(e).into_bytes()
}

pub fn encode_event_string(e: &RawExecutionEvent) -> String {
    // fixed field order: pmID, caseID, nodeID, state, payload, ts
    let map: Map<String, Json> = e
        .payload
        .iter()
        .map(|(k, v)| (k.clone(), v.to_json()))
        .collect();
    format!(
        "{{\"pmID\":{},\"caseID\":{},\"nodeID\":{},\"state\":\"{}\",\"payload\":{},\"ts\":{}}}",
        e.model.0,
        e.case.0,
        Json::String(e.node.clone()),
        e.state,
        Json::Object(map),
        e.ts.0
    )
}

pub fn decode_event(bytes: &[u8]) -> Result<RawExecutionEvent, DecodeError> {
    let value: Json =
        serde_json::from_slice(bytes).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    event_from_json(&value)
}

/// Decodes an event from an already-parsed JSON value.
pub fn event_from_json(value: &Json) -> Result<RawExecutionEvent, DecodeError> {
    let obj = value
        .as_object()
        .ok_or_else(|| DecodeError::Syntax("expected a JSON object".into()))?;
    let get = |name: &'static str| obj.get(name).ok_or(DecodeError::MissingField(name));
    let uint = |name: &'static str| -> Result<u64, DecodeError> {
        get(name)?.as_u64().ok_or(DecodeError::InvalidField {
            field: name,
            reason: "expected a non-negative integer".into(),
        })
    };

    let model = ModelId(uint("pmID")?);
    let case = CaseId(uint("caseID")?);
    let node = get("nodeID")?
        .as_str()
        .ok_or(DecodeError::InvalidField {
            field: "nodeID",
            reason: "expected a string".into(),
        })?
        .to_string();
    if node.is_empty() {
        return Err(DecodeError::InvalidField {
            field: "nodeID",
            reason: "must not be empty".into(),
        });
    }
    let state: LifecycleState = get("state")?
        .as_str()
        .ok_or(DecodeError::InvalidField {
            field: "state",
            reason: "expected a string".into(),
        })?
        .parse()?;
    let payload = match get("payload")? {
        Json::Object(m) => decode_payload(m)?,
        _ => {
            return Err(DecodeError::InvalidField {
                field: "payload",
                reason: "expected an object".into(),
            })
        }
    };
    let ts = Timestamp(uint("ts")?);
    Ok(RawExecutionEvent {
        model,
        case,
        node,
        state,
        payload,
        ts,
    })
}

/// Converts a JSON object of scalars to a payload; nested values are rejected.
pub fn decode_payload(m: &Map<String, Json>) -> Result<Payload, DecodeError> {
    let mut out = Payload::new();
    for (k, v) in m {
        let s = match v {
            Json::Bool(b) => Scalar::Bool(*b),
            Json::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Scalar::Int(i)
                } else if let Some(f) = n.as_f64() {
                    Scalar::Decimal(f)
                } else {
                    return Err(DecodeError::InvalidField {
                        field: "payload",
                        reason: format!("number out of range for key {k:?}"),
                    });
                }
            }
            Json::String(s) => Scalar::Str(s.clone()),
            Json::Null | Json::Array(_) | Json::Object(_) => {
                return Err(DecodeError::InvalidField {
                    field: "payload",
                    reason: format!("value for key {k:?} is not a scalar"),
                })
            }
        };
        out.insert(k.clone(), s);
    }
    Ok(out)
}

/// Payload as a JSON object value.
pub fn payload_to_json(p: &Payload) -> Json {
    Json::Object(p.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

/// `{k=v; k2=v2;}` rendering used in CSV lines; `{}` when empty.
pub fn format_payload_braces(p: &Payload) -> String {
    if p.is_empty() {
        return "{}".to_string();
    }
    let mut s = String::from("{");
    for (i, (k, v)) in p.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{k}={v};"));
    }
    s.push('}');
    s
}

/// Human-readable log line: `pmID,caseID,nodeID, state, {k=v; ...}, ts`.
pub fn to_csv_line(e: &RawExecutionEvent) -> String {
    format!(
        "{},{},{}, {}, {}, {}",
        e.model,
        e.case,
        e.node,
        e.state,
        format_payload_braces(&e.payload),
        e.ts
    )
}

pub fn from_csv_line(line: &str) -> Result<RawExecutionEvent, DecodeError> {
    let open = line
        .find('{')
        .ok_or(DecodeError::MissingField("payload"))?;
    let close = line
        .rfind('}')
        .filter(|c| *c > open)
        .ok_or(DecodeError::Syntax("unterminated payload".into()))?;
    let head: Vec<&str> = line[..open].split(',').map(str::trim).collect();
    // head = [pmID, caseID, nodeID..., state, ""]
    if head.len() < 5 {
        return Err(DecodeError::Syntax("expected pmID,caseID,nodeID,state".into()));
    }
    let num = |s: &str, field: &'static str| {
        s.parse::<u64>().map_err(|_| DecodeError::InvalidField {
            field,
            reason: format!("{s:?} is not a non-negative integer"),
        })
    };
    let model = ModelId(num(head[0], "pmID")?);
    let case = CaseId(num(head[1], "caseID")?);
    let state: LifecycleState = head[head.len() - 2].parse()?;
    let node = head[2..head.len() - 2].join(",");
    if node.is_empty() {
        return Err(DecodeError::MissingField("nodeID"));
    }
    let mut payload = Payload::new();
    for item in line[open + 1..close].split(';') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (k, v) = item.split_once('=').ok_or(DecodeError::InvalidField {
            field: "payload",
            reason: format!("expected key=value, got {item:?}"),
        })?;
        payload.insert(k.trim().to_string(), Scalar::parse_loose(v));
    }
    let tail = line[close + 1..].trim().trim_start_matches(',').trim();
    if tail.is_empty() {
        return Err(DecodeError::MissingField("ts"));
    }
    let ts = Timestamp(num(tail, "ts")?);
    Ok(RawExecutionEvent {
        model,
        case,
        node,
        state,
        payload,
        ts,
    })
}
