use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::event::Scalar;
use crate::expr::{self, EvalError};

use super::rule::{Action, KeyConstraint, RuleExpr, RuleIR, Scan};
use super::value::{FieldType, Row, SchemaDef, SchemaKind, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CqlError {
    #[error("schema {0} is already registered")]
    DuplicateSchema(String),
    #[error("malformed schema {name}: {reason}")]
    MalformedSchema { name: String, reason: String },
    #[error("unknown stream {0}")]
    UnknownStream(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("rule {0} is already deployed")]
    DuplicateRule(String),
    #[error("rule {rule}: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error(transparent)]
    Runtime(#[from] RuleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("type mismatch: {0}")]
    Type(String),
    #[error("duplicate key {key} in {table}")]
    KeyConflict { table: String, key: String },
    #[error("schema violation in {table}: {reason}")]
    Schema { table: String, reason: String },
    #[error("cascade exceeded {0} steps without quiescing")]
    NotQuiescent(usize),
}

/// A guard or action failure that aborted a cascade.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("rule {rule} failed on {stream} record: {error}")]
pub struct Fault {
    pub rule: String,
    pub stream: String,
    pub record: Row,
    pub error: RuleError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Insert,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub table: String,
    pub kind: MutationKind,
    pub key: Vec<Value>,
    pub before: Option<Row>,
    pub after: Option<Row>,
}

/// Processing of one record inside a cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub stream: String,
    pub record: Row,
    pub fired: Vec<String>,
    pub mutations: Vec<Mutation>,
    pub generated: Vec<(String, Row)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cascade {
    pub steps: Vec<Step>,
}

impl Cascade {
    /// Records generated by rules, in generation order.
    pub fn emitted(&self) -> Vec<(String, Row)> {
        self.steps
            .iter()
            .flat_map(|s| s.generated.iter().cloned())
            .collect()
    }

    pub fn mutations(&self) -> impl Iterator<Item = &Mutation> {
        self.steps.iter().flat_map(|s| s.mutations.iter())
    }
}

#[derive(Debug, Clone, Default)]
struct Table {
    schema: SchemaDef,
    rows: BTreeMap<Vec<Value>, Row>,
}

impl Default for SchemaDef {
    fn default() -> Self {
        SchemaDef::table("", &[], &[])
    }
}

type Frames<'a> = [(&'a str, &'a Row)];

fn lookup<'a>(env: &Frames<'a>, alias: &str) -> Option<&'a Row> {
    env.iter().rev().find(|(a, _)| *a == alias).map(|(_, r)| *r)
}

fn with<'a>(env: &Frames<'a>, alias: &'a str, row: &'a Row) -> Vec<(&'a str, &'a Row)> {
    let mut v = env.to_vec();
    v.push((alias, row));
    v
}

const DEFAULT_MAX_STEPS: usize = 100_000;

/// Streams, keyed tables and the rules reacting to stream records.
#[derive(Debug, Clone)]
pub struct Engine {
    schemas: BTreeMap<String, SchemaDef>,
    tables: BTreeMap<String, Table>,
    rules: BTreeMap<String, RuleIR>,
    by_stream: BTreeMap<String, BTreeSet<String>>,
    max_steps: usize,
    position: Cell<usize>,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

impl Engine {
    pub fn new() -> Self {
        Engine {
            schemas: BTreeMap::new(),
            tables: BTreeMap::new(),
            rules: BTreeMap::new(),
            by_stream: BTreeMap::new(),
            max_steps: DEFAULT_MAX_STEPS,
            position: Cell::new(0),
        }
    }

    pub fn set_max_steps(&mut self, n: usize) {
        self.max_steps = n.max(1);
    }

    pub fn register_schema(&mut self, s: SchemaDef) -> Result<(), CqlError> {
        if self.schemas.contains_key(&s.name) {
            return Err(CqlError::DuplicateSchema(s.name));
        }
        let bad = |reason: String| CqlError::MalformedSchema {
            name: s.name.clone(),
            reason,
        };
        if s.name.is_empty() {
            return Err(bad("empty name".into()));
        }
        let mut seen = BTreeSet::new();
        for (f, _) in &s.fields {
            if !seen.insert(f.as_str()) {
                return Err(bad(format!("duplicate field {f}")));
            }
        }
        match s.kind {
            SchemaKind::Stream if !s.keys.is_empty() => {
                return Err(bad("streams have no keys".into()))
            }
            SchemaKind::Table if s.keys.is_empty() => {
                return Err(bad("tables need a primary key".into()))
            }
            _ => {}
        }
        for k in &s.keys {
            if !seen.contains(k.as_str()) {
                return Err(bad(format!("key {k} is not a field")));
            }
        }
        if s.kind == SchemaKind::Table {
            self.tables.insert(
                s.name.clone(),
                Table {
                    schema: s.clone(),
                    rows: BTreeMap::new(),
                },
            );
        }
        self.schemas.insert(s.name.clone(), s);
        Ok(())
    }

    /// Registers the schema unless one with the same name exists already.
    pub fn ensure_schema(&mut self, s: SchemaDef) -> Result<(), CqlError> {
        match self.schemas.get(&s.name) {
            Some(existing) if *existing == s => Ok(()),
            Some(_) => Err(CqlError::DuplicateSchema(s.name)),
            None => self.register_schema(s),
        }
    }

    pub fn schema(&self, name: &str) -> Option<&SchemaDef> {
        self.schemas.get(name)
    }

    pub fn deploy_rule(&mut self, r: RuleIR) -> Result<(), CqlError> {
        if self.rules.contains_key(&r.id) {
            return Err(CqlError::DuplicateRule(r.id.clone()));
        }
        self.validate(&r)?;
        self.by_stream
            .entry(r.trigger.stream.clone())
            .or_default()
            .insert(r.id.clone());
        self.rules.insert(r.id.clone(), r);
        Ok(())
    }

    pub fn undeploy_rule(&mut self, id: &str) -> bool {
        match self.rules.remove(id) {
            Some(r) => {
                if let Some(set) = self.by_stream.get_mut(&r.trigger.stream) {
                    set.remove(id);
                }
                true
            }
            None => false,
        }
    }

    pub fn rule(&self, id: &str) -> Option<&RuleIR> {
        self.rules.get(id)
    }

    pub fn rules(&self) -> impl Iterator<Item = &RuleIR> {
        self.rules.values()
    }

    /// Replaces the case filter of a deployed rule.
    pub fn set_case_filter(&mut self, id: &str, f: Option<super::rule::CaseFilter>) -> bool {
        match self.rules.get_mut(id) {
            Some(r) => {
                r.case_filter = f;
                true
            }
            None => false,
        }
    }

    /// Feeds one record and runs every triggered rule until no emitted record
    /// remains unprocessed. On failure every table change made by the
    /// cascade is undone.
    pub fn ingest(&mut self, stream: &str, record: Row) -> Result<Cascade, Fault> {
        let mut cascade = Cascade::default();
        let result = self.run_cascade(stream, record, &mut cascade);
        if let Err(fault) = result {
            for m in cascade.mutations().collect::<Vec<_>>().into_iter().rev() {
                self.undo(m);
            }
            return Err(fault);
        }
        Ok(cascade)
    }

    fn run_cascade(
        &mut self,
        stream: &str,
        record: Row,
        cascade: &mut Cascade,
    ) -> Result<(), Fault> {
        let mut queue = VecDeque::from([(stream.to_string(), record)]);
        while let Some((stream, record)) = queue.pop_front() {
            if cascade.steps.len() >= self.max_steps {
                return Err(Fault {
                    rule: String::new(),
                    stream,
                    record,
                    error: RuleError::NotQuiescent(self.max_steps),
                });
            }
            self.position.set(cascade.steps.len());
            let mut step = Step {
                stream: stream.clone(),
                record: record.clone(),
                fired: Vec::new(),
                mutations: Vec::new(),
                generated: Vec::new(),
            };
            let ids: Vec<String> = self
                .by_stream
                .get(&stream)
                .map(|s| s.iter().cloned().collect())
                .unwrap_or_default();
            let mut failure = None;
            for id in ids {
                let rule = match self.rules.get(&id) {
                    Some(r) => r.clone(),
                    None => continue,
                };
                match self.fire(&rule, &record, &mut step) {
                    Ok(true) => step.fired.push(id),
                    Ok(false) => {}
                    Err(error) => {
                        failure = Some(Fault {
                            rule: id,
                            stream: stream.clone(),
                            record: record.clone(),
                            error,
                        });
                        break;
                    }
                }
            }
            queue.extend(step.generated.iter().cloned());
            cascade.steps.push(step);
            if let Some(f) = failure {
                return Err(f);
            }
        }
        Ok(())
    }

    fn fire(&mut self, rule: &RuleIR, record: &Row, step: &mut Step) -> Result<bool, RuleError> {
        if let Some(cf) = &rule.case_filter {
            match record.get("caseID").and_then(Value::as_int) {
                Some(c) if c >= 0 && cf.admits(c as u64) => {}
                _ => return Ok(false),
            }
        }
        let env: Vec<(&str, &Row)> = vec![(rule.trigger.alias.as_str(), record)];
        if !self.truthy(&rule.trigger.filter, &env)? {
            return Ok(false);
        }
        let mut combos: Vec<Vec<Row>> = vec![Vec::new()];
        for (ji, join) in rule.joins.iter().enumerate() {
            let mut next = Vec::new();
            for combo in &combos {
                let matches = {
                    let env = bind_all(&env, &rule.joins[..ji], combo);
                    let env = &env[..];
                    let scan = Scan {
                        table: join.table.clone(),
                        alias: join.alias.clone(),
                        keys: join.on.clone(),
                        pred: Box::new(RuleExpr::truth()),
                    };
                    self.scan(&scan, &env)?
                };
                if matches.is_empty() && join.optional {
                    let mut c = combo.clone();
                    c.push(Row::new());
                    next.push(c);
                }
                for (_, row) in matches {
                    let mut c = combo.clone();
                    c.push(row);
                    next.push(c);
                }
            }
            combos = next;
        }
        let mut fired = false;
        for combo in combos {
            let env = bind_all(&env, &rule.joins, &combo);
            if !self.truthy(&rule.guard, &env)? {
                continue;
            }
            fired = true;
            for action in &rule.actions {
                self.apply(action, &env, step)?;
            }
        }
        Ok(fired)
    }

    fn apply(&mut self, action: &Action, env: &Frames, step: &mut Step) -> Result<(), RuleError> {
        match action {
            Action::Emit { stream, fields } => {
                let schema = self.schemas.get(stream).ok_or_else(|| RuleError::Schema {
                    table: stream.clone(),
                    reason: "unknown stream".into(),
                })?;
                let mut row: Row = schema
                    .fields
                    .iter()
                    .map(|(n, _)| (n.clone(), Value::Null))
                    .collect();
                for (name, e) in fields {
                    row.insert(name.clone(), self.eval(e, env)?);
                }
                conform(schema, &row)?;
                step.generated.push((stream.clone(), row));
            }
            Action::MergeUpsert {
                table,
                alias,
                key,
                on_match,
                on_insert,
            } => {
                let mut keyed = Row::new();
                for (c, e) in key {
                    keyed.insert(c.clone(), self.eval(e, env)?);
                }
                let t = self.table(table)?;
                let k = t.schema.key_of(&keyed);
                let before = t.rows.get(&k).cloned();
                let after = match &before {
                    Some(old) => {
                        let inner = with(env, alias, old);
                        let mut row = old.clone();
                        for (c, e) in on_match {
                            row.insert(c.clone(), self.eval(e, &inner)?);
                        }
                        row
                    }
                    None => {
                        let empty = Row::new();
                        let inner = with(env, alias, &empty);
                        let mut row = self.blank_row(table)?;
                        row.extend(keyed);
                        for (c, e) in on_insert {
                            row.insert(c.clone(), self.eval(e, &inner)?);
                        }
                        row
                    }
                };
                if before.as_ref() != Some(&after) {
                    self.write(table, k, before, Some(after), step)?;
                }
            }
            Action::Insert { table, values } => {
                let mut row = self.blank_row(table)?;
                for (c, e) in values {
                    row.insert(c.clone(), self.eval(e, env)?);
                }
                let t = self.table(table)?;
                let k = t.schema.key_of(&row);
                if t.rows.contains_key(&k) {
                    return Err(RuleError::KeyConflict {
                        table: table.clone(),
                        key: fmt_key(&k),
                    });
                }
                self.write(table, k, None, Some(row), step)?;
            }
            Action::Update { scan, set } => {
                let hits = self.scan(scan, env)?;
                let mut changes = Vec::new();
                for (k, old) in hits {
                    let inner = with(env, &scan.alias, &old);
                    let mut row = old.clone();
                    for (c, e) in set {
                        row.insert(c.clone(), self.eval(e, &inner)?);
                    }
                    if row != old {
                        changes.push((k, old, row));
                    }
                }
                for (k, old, row) in changes {
                    if self.table(&scan.table)?.schema.key_of(&row) != k {
                        return Err(RuleError::Schema {
                            table: scan.table.clone(),
                            reason: "update may not change key columns".into(),
                        });
                    }
                    self.write(&scan.table, k, Some(old), Some(row), step)?;
                }
            }
            Action::Delete { scan } => {
                for (k, old) in self.scan(scan, env)? {
                    self.write(&scan.table, k, Some(old), None, step)?;
                }
            }
        }
        Ok(())
    }

    fn blank_row(&self, table: &str) -> Result<Row, RuleError> {
        Ok(self
            .table(table)?
            .schema
            .fields
            .iter()
            .map(|(n, _)| (n.clone(), Value::Null))
            .collect())
    }

    fn write(
        &mut self,
        table: &str,
        key: Vec<Value>,
        before: Option<Row>,
        after: Option<Row>,
        step: &mut Step,
    ) -> Result<(), RuleError> {
        let t = self
            .tables
            .get_mut(table)
            .ok_or_else(|| unknown_table(table))?;
        let kind = match (&before, &after) {
            (None, Some(_)) => MutationKind::Insert,
            (Some(_), Some(_)) => MutationKind::Update,
            _ => MutationKind::Delete,
        };
        match &after {
            Some(row) => {
                conform(&t.schema, row)?;
                t.rows.insert(key.clone(), row.clone());
            }
            None => {
                t.rows.remove(&key);
            }
        }
        step.mutations.push(Mutation {
            table: table.to_string(),
            kind,
            key,
            before,
            after,
        });
        Ok(())
    }

    fn undo(&mut self, m: &Mutation) {
        if let Some(t) = self.tables.get_mut(&m.table) {
            match &m.before {
                Some(row) => {
                    t.rows.insert(m.key.clone(), row.clone());
                }
                None => {
                    t.rows.remove(&m.key);
                }
            }
        }
    }

    fn table(&self, name: &str) -> Result<&Table, RuleError> {
        self.tables.get(name).ok_or_else(|| unknown_table(name))
    }

    fn scan(&self, scan: &Scan, env: &Frames) -> Result<Vec<(Vec<Value>, Row)>, RuleError> {
        let mut wanted = Vec::with_capacity(scan.keys.len());
        for (c, e) in &scan.keys {
            wanted.push((c.as_str(), self.eval(e, env)?));
        }
        let t = self.table(&scan.table)?;
        let mut out = Vec::new();
        let mut inner = env.to_vec();
        for (k, row) in prefix_range(t, &wanted) {
            let hit = wanted
                .iter()
                .all(|(c, v)| row.get(*c).unwrap_or(&Value::Null) == v);
            if !hit {
                continue;
            }
            inner.push((scan.alias.as_str(), row));
            let keep = self.truthy(&scan.pred, &inner);
            inner.pop();
            if keep? {
                out.push((k.clone(), row.clone()));
            }
        }
        Ok(out)
    }

    fn truthy(&self, e: &RuleExpr, env: &Frames) -> Result<bool, RuleError> {
        match self.eval(e, env)? {
            Value::Bool(b) => Ok(b),
            other => Err(RuleError::Type(format!(
                "expected boolean, got {}",
                other.type_name()
            ))),
        }
    }

    fn eval(&self, e: &RuleExpr, env: &Frames) -> Result<Value, RuleError> {
        Ok(match e {
            RuleExpr::Lit(v) => v.clone(),
            RuleExpr::Position => Value::Int(self.position.get() as i64),
            RuleExpr::Field(alias, name) => {
                let row = lookup(env, alias).ok_or_else(|| {
                    RuleError::Type(format!("alias {alias} is not bound"))
                })?;
                row.get(name).cloned().unwrap_or(Value::Null)
            }
            RuleExpr::Cmp(op, a, b) => {
                let (x, y) = (self.eval(a, env)?, self.eval(b, env)?);
                if !x.comparable(&y) {
                    return Err(RuleError::Type(format!(
                        "cannot compare {} with {}",
                        x.type_name(),
                        y.type_name()
                    )));
                }
                Value::Bool(op.holds(x.cmp(&y)))
            }
            RuleExpr::And(parts) => {
                for p in parts {
                    if !self.truthy(p, env)? {
                        return Ok(Value::Bool(false));
                    }
                }
                Value::Bool(true)
            }
            RuleExpr::Or(parts) => {
                for p in parts {
                    if self.truthy(p, env)? {
                        return Ok(Value::Bool(true));
                    }
                }
                Value::Bool(false)
            }
            RuleExpr::Not(a) => Value::Bool(!self.truthy(a, env)?),
            RuleExpr::IsNull(a) => Value::Bool(self.eval(a, env)?.is_null()),
            RuleExpr::In(a, list) => {
                let x = self.eval(a, env)?;
                for item in list {
                    if self.eval(item, env)? == x {
                        return Ok(Value::Bool(true));
                    }
                }
                Value::Bool(false)
            }
            RuleExpr::Exists { scan, negated } => {
                let any = !self.scan(scan, env)?.is_empty();
                Value::Bool(any != *negated)
            }
            RuleExpr::Case { whens, otherwise } => {
                for (c, v) in whens {
                    if self.truthy(c, env)? {
                        return self.eval(v, env);
                    }
                }
                self.eval(otherwise, env)?
            }
            RuleExpr::Eval { scope, expr } => {
                let scope = self.eval(scope, env)?;
                let map = match &scope {
                    Value::Map(m) => Some(m),
                    Value::Null => None,
                    other => {
                        return Err(RuleError::Type(format!(
                            "evaluation scope must be a map, got {}",
                            other.type_name()
                        )))
                    }
                };
                let lookup = |name: &str| -> Option<Scalar> {
                    map.and_then(|m| m.get(name)).and_then(Value::to_scalar)
                };
                Value::from(&expr::evaluate(expr, &lookup)?)
            }
            RuleExpr::MapMerge(a, b) => {
                let mut out = as_map(self.eval(a, env)?)?;
                out.extend(as_map(self.eval(b, env)?)?);
                Value::Map(out)
            }
            RuleExpr::Coalesce(parts) => {
                for p in parts {
                    let v = self.eval(p, env)?;
                    if !v.is_null() {
                        return Ok(v);
                    }
                }
                Value::Null
            }
        })
    }

    /// Rows of `table` whose columns equal the given values.
    pub fn query_table(&self, table: &str, keys: &[(&str, Value)]) -> Result<Vec<Row>, CqlError> {
        let t = self
            .tables
            .get(table)
            .ok_or_else(|| CqlError::UnknownTable(table.into()))?;
        Ok(prefix_range(t, keys)
            .filter(|(_, r)| keys.iter().all(|(c, v)| r.get(*c).unwrap_or(&Value::Null) == v))
            .map(|(_, r)| r.clone())
            .collect())
    }

    /// Evaluates an exists atom outside of any rule; `outer` binds aliases the
    /// key constraints and predicate may refer to.
    pub fn exists_check(
        &self,
        scan: &Scan,
        negated: bool,
        outer: &[(&str, &Row)],
    ) -> Result<bool, CqlError> {
        if !self.tables.contains_key(&scan.table) {
            return Err(CqlError::UnknownTable(scan.table.clone()));
        }
        let none = self.scan(scan, outer)?.is_empty();
        Ok(none == negated)
    }

    pub fn table_len(&self, table: &str) -> usize {
        self.tables.get(table).map_or(0, |t| t.rows.len())
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn rows(&self, table: &str) -> impl Iterator<Item = &Row> {
        self.tables.get(table).into_iter().flat_map(|t| t.rows.values())
    }

    /// Inserts or replaces a row directly, bypassing rules.
    pub fn put_row(&mut self, table: &str, row: Row) -> Result<Option<Row>, CqlError> {
        let t = self
            .tables
            .get_mut(table)
            .ok_or_else(|| CqlError::UnknownTable(table.into()))?;
        let mut full: Row = t
            .schema
            .fields
            .iter()
            .map(|(n, _)| (n.clone(), Value::Null))
            .collect();
        full.extend(row);
        conform(&t.schema, &full)?;
        let k = t.schema.key_of(&full);
        Ok(t.rows.insert(k, full))
    }

    /// Deletes the rows whose columns equal the given values; returns them.
    pub fn delete_rows(&mut self, table: &str, keys: &[(&str, Value)]) -> Result<Vec<Row>, CqlError> {
        let doomed: Vec<Row> = self.query_table(table, keys)?;
        let t = self.tables.get_mut(table).expect("checked by query_table");
        for r in &doomed {
            let k = t.schema.key_of(r);
            t.rows.remove(&k);
        }
        Ok(doomed)
    }

    /// Per-table CSV snapshot with a header line, rows in key order.
    pub fn dump_table(&self, table: &str) -> Option<String> {
        let t = self.tables.get(table)?;
        let mut s = String::new();
        let header: Vec<&str> = t.schema.fields.iter().map(|(n, _)| n.as_str()).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for row in t.rows.values() {
            let cells: Vec<String> = header
                .iter()
                .map(|c| csv_cell(&row.get(*c).cloned().unwrap_or(Value::Null).to_string()))
                .collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        Some(s)
    }

    /// Snapshot of every table, in name order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for name in self.tables.keys() {
            let _ = writeln!(s, "# {name}");
            s.push_str(&self.dump_table(name).unwrap_or_default());
        }
        s
    }

    fn validate(&self, r: &RuleIR) -> Result<(), CqlError> {
        let bad = |reason: String| CqlError::InvalidRule {
            rule: r.id.clone(),
            reason,
        };
        let trig = self
            .schemas
            .get(&r.trigger.stream)
            .filter(|s| s.kind == SchemaKind::Stream)
            .ok_or_else(|| CqlError::UnknownStream(r.trigger.stream.clone()))?;
        let mut scope: Vec<(&str, &SchemaDef)> = vec![(&r.trigger.alias, trig)];
        self.check_expr(&r.trigger.filter, &scope).map_err(bad)?;
        for j in &r.joins {
            let t = self.table_schema(&j.table)?;
            if scope.iter().any(|(a, _)| *a == j.alias) {
                return Err(bad(format!("alias {} is bound twice", j.alias)));
            }
            self.check_constraints(&j.on, t, &scope).map_err(bad)?;
            scope.push((&j.alias, t));
        }
        self.check_expr(&r.guard, &scope).map_err(bad)?;
        for a in &r.actions {
            match a {
                Action::Emit { stream, fields } => {
                    let s = self
                        .schemas
                        .get(stream)
                        .filter(|s| s.kind == SchemaKind::Stream)
                        .ok_or_else(|| CqlError::UnknownStream(stream.clone()))?;
                    self.check_assign(fields, s, &scope).map_err(bad)?;
                }
                Action::MergeUpsert {
                    table,
                    alias,
                    key,
                    on_match,
                    on_insert,
                } => {
                    let t = self.table_schema(table)?;
                    self.check_assign(key, t, &scope).map_err(bad)?;
                    let mut names: Vec<&str> = key.iter().map(|(c, _)| c.as_str()).collect();
                    names.sort_unstable();
                    let mut keys: Vec<&str> = t.keys.iter().map(String::as_str).collect();
                    keys.sort_unstable();
                    if names != keys {
                        return Err(bad(format!("merge into {table} must address the full key")));
                    }
                    let mut inner = scope.clone();
                    inner.push((alias, t));
                    self.check_assign(on_match, t, &inner).map_err(bad)?;
                    self.check_assign(on_insert, t, &inner).map_err(bad)?;
                }
                Action::Insert { table, values } => {
                    let t = self.table_schema(table)?;
                    self.check_assign(values, t, &scope).map_err(bad)?;
                }
                Action::Update { scan, set } => {
                    let t = self.check_scan(scan, &scope).map_err(|e| match e {
                        Ok(e) => e,
                        Err(reason) => bad(reason),
                    })?;
                    let mut inner = scope.clone();
                    inner.push((&scan.alias, t));
                    self.check_assign(set, t, &inner).map_err(bad)?;
                }
                Action::Delete { scan } => {
                    self.check_scan(scan, &scope).map_err(|e| match e {
                        Ok(e) => e,
                        Err(reason) => bad(reason),
                    })?;
                }
            }
        }
        Ok(())
    }

    fn table_schema(&self, name: &str) -> Result<&SchemaDef, CqlError> {
        self.tables
            .get(name)
            .map(|t| &t.schema)
            .ok_or_else(|| CqlError::UnknownTable(name.into()))
    }

    fn check_scan<'a>(
        &'a self,
        scan: &'a Scan,
        scope: &[(&'a str, &'a SchemaDef)],
    ) -> Result<&'a SchemaDef, Result<CqlError, String>> {
        let t = self.table_schema(&scan.table).map_err(Ok)?;
        self.check_constraints(&scan.keys, t, scope).map_err(Err)?;
        let mut inner = scope.to_vec();
        inner.push((&scan.alias, t));
        self.check_expr(&scan.pred, &inner).map_err(Err)?;
        Ok(t)
    }

    fn check_constraints(
        &self,
        keys: &[KeyConstraint],
        t: &SchemaDef,
        scope: &[(&str, &SchemaDef)],
    ) -> Result<(), String> {
        for (c, e) in keys {
            if !t.has_field(c) {
                return Err(format!("{} has no column {c}", t.name));
            }
            self.check_expr(e, scope)?;
        }
        Ok(())
    }

    fn check_assign(
        &self,
        set: &[(String, RuleExpr)],
        target: &SchemaDef,
        scope: &[(&str, &SchemaDef)],
    ) -> Result<(), String> {
        for (c, e) in set {
            if !target.has_field(c) {
                return Err(format!("{} has no field {c}", target.name));
            }
            self.check_expr(e, scope)?;
        }
        Ok(())
    }

    fn check_expr(&self, e: &RuleExpr, scope: &[(&str, &SchemaDef)]) -> Result<(), String> {
        match e {
            RuleExpr::Lit(_) | RuleExpr::Position => Ok(()),
            RuleExpr::Field(alias, name) => {
                match scope.iter().rev().find(|(a, _)| a == alias) {
                    None => Err(format!("unbound alias {alias} in {alias}.{name}")),
                    Some((_, s)) if !s.has_field(name) => {
                        Err(format!("unbound field {alias}.{name}: {} has no such field", s.name))
                    }
                    Some(_) => Ok(()),
                }
            }
            RuleExpr::Cmp(_, a, b) | RuleExpr::MapMerge(a, b) => {
                self.check_expr(a, scope)?;
                self.check_expr(b, scope)
            }
            RuleExpr::And(v) | RuleExpr::Or(v) | RuleExpr::Coalesce(v) => {
                v.iter().try_for_each(|x| self.check_expr(x, scope))
            }
            RuleExpr::Not(a) | RuleExpr::IsNull(a) => self.check_expr(a, scope),
            RuleExpr::In(a, v) => {
                self.check_expr(a, scope)?;
                v.iter().try_for_each(|x| self.check_expr(x, scope))
            }
            RuleExpr::Exists { scan, .. } => {
                self.check_scan(scan, scope).map(|_| ()).map_err(|e| match e {
                    Ok(e) => e.to_string(),
                    Err(s) => s,
                })
            }
            RuleExpr::Case { whens, otherwise } => {
                for (c, v) in whens {
                    self.check_expr(c, scope)?;
                    self.check_expr(v, scope)?;
                }
                self.check_expr(otherwise, scope)
            }
            RuleExpr::Eval { scope: s, .. } => self.check_expr(s, scope),
        }
    }
}

fn bind_all<'a>(
    base: &Frames<'a>,
    joins: &'a [super::rule::Join],
    rows: &'a [Row],
) -> Vec<(&'a str, &'a Row)> {
    let mut v = base.to_vec();
    v.extend(joins.iter().map(|j| j.alias.as_str()).zip(rows.iter()));
    v
}

fn prefix_range<'a>(
    t: &'a Table,
    wanted: &[(&str, Value)],
) -> Box<dyn Iterator<Item = (&'a Vec<Value>, &'a Row)> + 'a> {
    let mut prefix = Vec::new();
    for k in &t.schema.keys {
        match wanted.iter().find(|(c, _)| c == k) {
            Some((_, v)) => prefix.push(v.clone()),
            None => break,
        }
    }
    if prefix.is_empty() {
        return Box::new(t.rows.iter());
    }
    let n = prefix.len();
    let start = prefix.clone();
    Box::new(
        t.rows
            .range(start..)
            .take_while(move |(k, _)| k.len() >= n && k[..n] == prefix[..]),
    )
}

fn as_map(v: Value) -> Result<BTreeMap<String, Value>, RuleError> {
    match v {
        Value::Map(m) => Ok(m),
        Value::Null => Ok(BTreeMap::new()),
        other => Err(RuleError::Type(format!(
            "expected map, got {}",
            other.type_name()
        ))),
    }
}

fn conform(schema: &SchemaDef, row: &Row) -> Result<(), RuleError> {
    for (c, v) in row {
        let ty: FieldType = schema.field_type(c).ok_or_else(|| RuleError::Schema {
            table: schema.name.clone(),
            reason: format!("unknown column {c}"),
        })?;
        if !ty.admits(v) {
            return Err(RuleError::Schema {
                table: schema.name.clone(),
                reason: format!("column {c} expects {}, got {}", ty.name(), v.type_name()),
            });
        }
    }
    for k in &schema.keys {
        if row.get(k).is_none_or(Value::is_null) {
            return Err(RuleError::Schema {
                table: schema.name.clone(),
                reason: format!("key column {k} is null"),
            });
        }
    }
    Ok(())
}

fn unknown_table(name: &str) -> RuleError {
    RuleError::Schema {
        table: name.into(),
        reason: "unknown table".into(),
    }
}

fn fmt_key(k: &[Value]) -> String {
    let parts: Vec<String> = k.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(", "))
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
