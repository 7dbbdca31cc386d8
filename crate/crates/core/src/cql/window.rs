//! Tumbling time windows over stream records.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::value::{Row, Value};

type FoldFn = dyn Fn(Value, &Row) -> Value + Send + Sync;

#[derive(Clone)]
pub enum Aggregate {
    Count,
    Fold { init: Value, step: Arc<FoldFn> },
}

impl fmt::Debug for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregate::Count => f.write_str("Count"),
            Aggregate::Fold { init, .. } => write!(f, "Fold({init:?})"),
        }
    }
}

impl Aggregate {
    fn init(&self) -> Value {
        match self {
            Aggregate::Count => Value::Int(0),
            Aggregate::Fold { init, .. } => init.clone(),
        }
    }

    fn step(&self, acc: Value, row: &Row) -> Value {
        match self {
            Aggregate::Count => Value::Int(acc.as_int().unwrap_or(0) + 1),
            Aggregate::Fold { step, .. } => step(acc, row),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowSpec {
    pub length_ms: u64,
    pub aggregate: Aggregate,
    pub partition: Vec<String>,
    pub ts_field: String,
}

impl WindowSpec {
    /// Counting window of the given length over the `ts` field.
    pub fn count(length_ms: u64) -> Self {
        assert!(length_ms > 0, "window length must be positive");
        WindowSpec {
            length_ms,
            aggregate: Aggregate::Count,
            partition: Vec::new(),
            ts_field: "ts".into(),
        }
    }

    pub fn partitioned(mut self, keys: &[&str]) -> Self {
        self.partition = keys.iter().map(|k| k.to_string()).collect();
        self
    }

    pub fn index_of(&self, ts: u64) -> u64 {
        ts / self.length_ms
    }
}

/// One aggregate for the window `[start, end)` of one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEmission {
    pub start: u64,
    pub end: u64,
    pub partition: Vec<Value>,
    pub value: Value,
}

/// Incremental operator; emits each window once its end has passed.
#[derive(Debug, Clone)]
pub struct TumblingWindow {
    spec: WindowSpec,
    current: Option<u64>,
    acc: BTreeMap<Vec<Value>, Value>,
}

impl TumblingWindow {
    pub fn new(spec: WindowSpec) -> Self {
        TumblingWindow {
            spec,
            current: None,
            acc: BTreeMap::new(),
        }
    }

    /// Starts at window `index` even when no record has arrived yet.
    pub fn starting_at(spec: WindowSpec, index: u64) -> Self {
        let mut w = Self::new(spec);
        w.current = Some(index);
        w
    }

    fn ts(&self, row: &Row) -> u64 {
        row.get(&self.spec.ts_field)
            .and_then(Value::as_int)
            .map_or(0, |t| t.max(0) as u64)
    }

    fn close(&mut self, out: &mut Vec<WindowEmission>) {
        let Some(k) = self.current else { return };
        let (start, end) = (k * self.spec.length_ms, (k + 1) * self.spec.length_ms);
        if self.acc.is_empty() && self.spec.partition.is_empty() {
            out.push(WindowEmission {
                start,
                end,
                partition: Vec::new(),
                value: self.spec.aggregate.init(),
            });
        }
        for (partition, value) in std::mem::take(&mut self.acc) {
            out.push(WindowEmission {
                start,
                end,
                partition,
                value,
            });
        }
    }

    /// Advances the clock to `ts`, closing every window that ended before it.
    pub fn advance(&mut self, ts: u64) -> Vec<WindowEmission> {
        let mut out = Vec::new();
        let k = self.spec.index_of(ts);
        match self.current {
            None => self.current = Some(k),
            Some(cur) if k > cur => {
                for w in cur..k {
                    self.current = Some(w);
                    self.close(&mut out);
                }
                self.current = Some(k);
            }
            Some(_) => {}
        }
        out
    }

    pub fn push(&mut self, row: &Row) -> Vec<WindowEmission> {
        let out = self.advance(self.ts(row));
        let key: Vec<Value> = self
            .spec
            .partition
            .iter()
            .map(|p| row.get(p).cloned().unwrap_or(Value::Null))
            .collect();
        let acc = self
            .acc
            .remove(&key)
            .unwrap_or_else(|| self.spec.aggregate.init());
        let next = self.spec.aggregate.step(acc, row);
        self.acc.insert(key, next);
        out
    }

    /// Closes the open window.
    pub fn flush(&mut self) -> Vec<WindowEmission> {
        let mut out = Vec::new();
        self.close(&mut out);
        self.current = self.current.map(|k| k + 1);
        out
    }
}

/// Aggregates time-ordered records per tumbling window. With `range`, every
/// window overlapping `[from, to)` is reported, including empty ones.
pub fn eval_window(
    spec: &WindowSpec,
    events: &[Row],
    range: Option<(u64, u64)>,
) -> Vec<WindowEmission> {
    let mut w = match range {
        Some((from, _)) => TumblingWindow::starting_at(spec.clone(), spec.index_of(from)),
        None => TumblingWindow::new(spec.clone()),
    };
    let mut out = Vec::new();
    for e in events {
        let ts = w.ts(e);
        if let Some((from, to)) = range {
            if ts < from || ts >= to {
                continue;
            }
        }
        out.extend(w.push(e));
    }
    if let Some((_, to)) = range {
        if to > 0 {
            out.extend(w.advance(to - 1));
        }
    }
    if w.current.is_some() {
        out.extend(w.flush());
    }
    out
}
