use std::fmt::{self, Write as _};
use std::sync::Arc;

use crate::expr::{CmpOp, Expression};

use super::value::Value;

/// A column constraint `column = expr`, used for joins and scans.
pub type KeyConstraint = (String, RuleExpr);

/// Rows of `table`, bound as `alias`, matching all `keys` and `pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub table: String,
    pub alias: String,
    pub keys: Vec<KeyConstraint>,
    pub pred: Box<RuleExpr>,
}

impl Scan {
    pub fn new(table: &str, alias: &str, keys: Vec<KeyConstraint>, pred: RuleExpr) -> Self {
        Scan {
            table: table.into(),
            alias: alias.into(),
            keys,
            pred: Box::new(pred),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleExpr {
    Lit(Value),
    Field(String, String),
    Cmp(CmpOp, Box<RuleExpr>, Box<RuleExpr>),
    And(Vec<RuleExpr>),
    Or(Vec<RuleExpr>),
    Not(Box<RuleExpr>),
    IsNull(Box<RuleExpr>),
    In(Box<RuleExpr>, Vec<RuleExpr>),
    Exists { scan: Scan, negated: bool },
    /// First branch whose condition holds; `otherwise` when none does.
    Case {
        whens: Vec<(RuleExpr, RuleExpr)>,
        otherwise: Box<RuleExpr>,
    },
    /// Evaluates an expression with the entries of a map value as bindings.
    Eval {
        scope: Box<RuleExpr>,
        expr: Arc<Expression>,
    },
    /// Right-biased union of two maps; null operands count as empty.
    MapMerge(Box<RuleExpr>, Box<RuleExpr>),
    Coalesce(Vec<RuleExpr>),
    /// Index of the record being processed within its cascade.
    Position,
}

impl RuleExpr {
    pub fn lit(v: impl Into<Value>) -> Self {
        RuleExpr::Lit(v.into())
    }

    pub fn null() -> Self {
        RuleExpr::Lit(Value::Null)
    }

    pub fn truth() -> Self {
        RuleExpr::Lit(Value::Bool(true))
    }

    pub fn field(alias: &str, name: &str) -> Self {
        RuleExpr::Field(alias.into(), name.into())
    }

    pub fn eq(a: RuleExpr, b: RuleExpr) -> Self {
        RuleExpr::Cmp(CmpOp::Eq, Box::new(a), Box::new(b))
    }

    pub fn ne(a: RuleExpr, b: RuleExpr) -> Self {
        RuleExpr::Cmp(CmpOp::Ne, Box::new(a), Box::new(b))
    }

    pub fn cmp(op: CmpOp, a: RuleExpr, b: RuleExpr) -> Self {
        RuleExpr::Cmp(op, Box::new(a), Box::new(b))
    }

    /// Conjunction that flattens nested `And` and drops literal `true`.
    pub fn all(parts: Vec<RuleExpr>) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match p {
                RuleExpr::And(inner) => out.extend(inner),
                RuleExpr::Lit(Value::Bool(true)) => {}
                other => out.push(other),
            }
        }
        match out.len() {
            0 => RuleExpr::truth(),
            1 => out.pop().unwrap(),
            _ => RuleExpr::And(out),
        }
    }

    pub fn any(parts: Vec<RuleExpr>) -> Self {
        match parts.len() {
            0 => RuleExpr::Lit(Value::Bool(false)),
            1 => parts.into_iter().next().unwrap(),
            _ => RuleExpr::Or(parts),
        }
    }

    pub fn not(e: RuleExpr) -> Self {
        RuleExpr::Not(Box::new(e))
    }

    pub fn exists(scan: Scan) -> Self {
        RuleExpr::Exists {
            scan,
            negated: false,
        }
    }

    pub fn not_exists(scan: Scan) -> Self {
        RuleExpr::Exists {
            scan,
            negated: true,
        }
    }

    pub fn eval(scope: RuleExpr, expr: Arc<Expression>) -> Self {
        RuleExpr::Eval {
            scope: Box::new(scope),
            expr,
        }
    }

    pub fn case(whens: Vec<(RuleExpr, RuleExpr)>, otherwise: RuleExpr) -> Self {
        RuleExpr::Case {
            whens,
            otherwise: Box::new(otherwise),
        }
    }

    pub fn merge(a: RuleExpr, b: RuleExpr) -> Self {
        RuleExpr::MapMerge(Box::new(a), Box::new(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Emit {
        stream: String,
        fields: Vec<(String, RuleExpr)>,
    },
    /// Upserts the row addressed by `key`; the current row, if any, is bound
    /// to `alias` while evaluating `on_match`.
    MergeUpsert {
        table: String,
        alias: String,
        key: Vec<(String, RuleExpr)>,
        on_match: Vec<(String, RuleExpr)>,
        on_insert: Vec<(String, RuleExpr)>,
    },
    Insert {
        table: String,
        values: Vec<(String, RuleExpr)>,
    },
    Update {
        scan: Scan,
        set: Vec<(String, RuleExpr)>,
    },
    Delete {
        scan: Scan,
    },
}

impl Action {
    pub fn table(&self) -> Option<&str> {
        match self {
            Action::Emit { .. } => None,
            Action::MergeUpsert { table, .. } | Action::Insert { table, .. } => Some(table),
            Action::Update { scan, .. } | Action::Delete { scan } => Some(&scan.table),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub stream: String,
    pub alias: String,
    pub filter: RuleExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub table: String,
    pub alias: String,
    pub on: Vec<KeyConstraint>,
    /// Left join: when no row matches the alias is bound to an all-null row.
    pub optional: bool,
}

/// Restricts a rule to case identifiers in `(min_excl, max_incl]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CaseFilter {
    pub min_excl: Option<u64>,
    pub max_incl: Option<u64>,
}

impl CaseFilter {
    pub fn up_to(max: u64) -> Self {
        CaseFilter {
            min_excl: None,
            max_incl: Some(max),
        }
    }

    pub fn after(min: u64) -> Self {
        CaseFilter {
            min_excl: Some(min),
            max_incl: None,
        }
    }

    pub fn admits(&self, case: u64) -> bool {
        self.min_excl.is_none_or(|m| case > m) && self.max_incl.is_none_or(|m| case <= m)
    }

    /// Intersection of two filters.
    pub fn and(self, other: CaseFilter) -> CaseFilter {
        CaseFilter {
            min_excl: match (self.min_excl, other.min_excl) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
            max_incl: match (self.max_incl, other.max_incl) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleIR {
    pub id: String,
    pub trigger: Trigger,
    pub joins: Vec<Join>,
    pub guard: RuleExpr,
    pub actions: Vec<Action>,
    pub case_filter: Option<CaseFilter>,
}

impl RuleIR {
    pub fn new(id: impl Into<String>, stream: &str, alias: &str) -> Self {
        RuleIR {
            id: id.into(),
            trigger: Trigger {
                stream: stream.into(),
                alias: alias.into(),
                filter: RuleExpr::truth(),
            },
            joins: Vec::new(),
            guard: RuleExpr::truth(),
            actions: Vec::new(),
            case_filter: None,
        }
    }

    pub fn filter(mut self, f: RuleExpr) -> Self {
        self.trigger.filter = f;
        self
    }

    pub fn join(mut self, table: &str, alias: &str, on: Vec<KeyConstraint>) -> Self {
        self.joins.push(Join {
            table: table.into(),
            alias: alias.into(),
            on,
            optional: false,
        });
        self
    }

    pub fn left_join(mut self, table: &str, alias: &str, on: Vec<KeyConstraint>) -> Self {
        self.joins.push(Join {
            table: table.into(),
            alias: alias.into(),
            on,
            optional: true,
        });
        self
    }

    pub fn guard(mut self, g: RuleExpr) -> Self {
        self.guard = g;
        self
    }

    pub fn action(mut self, a: Action) -> Self {
        self.actions.push(a);
        self
    }

    /// True when both rules behave identically, ignoring their ids.
    pub fn same_behavior(&self, other: &RuleIR) -> bool {
        self.trigger == other.trigger
            && self.joins == other.joins
            && self.guard == other.guard
            && self.actions == other.actions
            && self.case_filter == other.case_filter
    }

    /// CQL-like rendering for documentation and debugging.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "-- rule {}", self.id);
        let _ = write!(
            s,
            "on {} as {}",
            self.trigger.stream, self.trigger.alias
        );
        if self.trigger.filter != RuleExpr::truth() {
            let _ = write!(s, " where {}", self.trigger.filter);
        }
        s.push('\n');
        for j in &self.joins {
            let _ = writeln!(
                s,
                "{}join {} as {} on {}",
                if j.optional { "left " } else { "" },
                j.table,
                j.alias,
                constraints(&j.alias, &j.on)
            );
        }
        if let Some(cf) = &self.case_filter {
            let mut parts = Vec::new();
            if let Some(m) = cf.min_excl {
                parts.push(format!("caseID > {m}"));
            }
            if let Some(m) = cf.max_incl {
                parts.push(format!("caseID <= {m}"));
            }
            let _ = writeln!(s, "for cases {}", parts.join(" and "));
        }
        if self.guard != RuleExpr::truth() {
            let _ = writeln!(s, "when {}", self.guard);
        }
        s.push_str("do\n");
        for a in &self.actions {
            let _ = writeln!(s, "  {a};");
        }
        s
    }
}

fn constraints(alias: &str, keys: &[KeyConstraint]) -> String {
    if keys.is_empty() {
        return "true".into();
    }
    keys.iter()
        .map(|(c, e)| format!("{alias}.{c} = {e}"))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn assignments(set: &[(String, RuleExpr)]) -> String {
    set.iter()
        .map(|(c, e)| format!("{c} = {e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn scan_text(scan: &Scan) -> String {
    let mut w = constraints(&scan.alias, &scan.keys);
    if *scan.pred != RuleExpr::truth() {
        w = format!("{w} and {}", scan.pred);
    }
    format!("{} as {} where {w}", scan.table, scan.alias)
}

impl fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleExpr::Lit(Value::Str(s)) => write!(f, "'{s}'"),
            RuleExpr::Lit(Value::Null) => f.write_str("null"),
            RuleExpr::Lit(v) => write!(f, "{v}"),
            RuleExpr::Field(a, n) => write!(f, "{a}.{n}"),
            RuleExpr::Position => f.write_str("cascade_position()"),
            RuleExpr::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
            RuleExpr::And(v) => join(f, v, " and "),
            RuleExpr::Or(v) => join(f, v, " or "),
            RuleExpr::Not(e) => write!(f, "not ({e})"),
            RuleExpr::IsNull(e) => write!(f, "{e} is null"),
            RuleExpr::In(e, v) => {
                write!(f, "{e} in (")?;
                join(f, v, ", ")?;
                f.write_str(")")
            }
            RuleExpr::Exists { scan, negated } => write!(
                f,
                "{}exists (select 1 from {})",
                if *negated { "not " } else { "" },
                scan_text(scan)
            ),
            RuleExpr::Case { whens, otherwise } => {
                f.write_str("case")?;
                for (c, v) in whens {
                    write!(f, " when {c} then {v}")?;
                }
                write!(f, " else {otherwise} end")
            }
            RuleExpr::Eval { scope, expr } => write!(f, "evaluate({scope}, \"{expr}\")"),
            RuleExpr::MapMerge(a, b) => write!(f, "merge({a}, {b})"),
            RuleExpr::Coalesce(v) => {
                f.write_str("coalesce(")?;
                join(f, v, ", ")?;
                f.write_str(")")
            }
        }
    }
}

fn join(f: &mut fmt::Formatter<'_>, v: &[RuleExpr], sep: &str) -> fmt::Result {
    for (i, e) in v.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        match e {
            RuleExpr::And(_) | RuleExpr::Or(_) => write!(f, "({e})")?,
            _ => write!(f, "{e}")?,
        }
    }
    Ok(())
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |v: &[(String, RuleExpr)]| {
            v.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>().join(", ")
        };
        let exprs = |v: &[(String, RuleExpr)]| {
            v.iter()
                .map(|(_, e)| e.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        match self {
            Action::Emit { stream, fields } => write!(
                f,
                "insert into {stream} ({}) select {}",
                names(fields),
                exprs(fields)
            ),
            Action::MergeUpsert {
                table,
                alias,
                key,
                on_match,
                on_insert,
            } => {
                write!(
                    f,
                    "merge into {table} as {alias} using ({}) ",
                    constraints(alias, key)
                )?;
                if !on_match.is_empty() {
                    write!(f, "when matched then update set {} ", assignments(on_match))?;
                }
                let mut all = key.clone();
                all.extend(on_insert.iter().cloned());
                write!(
                    f,
                    "when not matched then insert ({}) values ({})",
                    names(&all),
                    exprs(&all)
                )
            }
            Action::Insert { table, values } => write!(
                f,
                "insert into {table} ({}) values ({})",
                names(values),
                exprs(values)
            ),
            Action::Update { scan, set } => {
                write!(f, "update {} set {}", scan_text(scan), assignments(set))
            }
            Action::Delete { scan } => write!(f, "delete from {}", scan_text(scan)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_filter_bounds() {
        let old = CaseFilter::up_to(5);
        let new = CaseFilter::after(5);
        for c in 0..20 {
            assert_ne!(old.admits(c), new.admits(c));
        }
        assert!(!old.and(new).admits(5) && !old.and(new).admits(6));
    }

    #[test]
    fn pretty_print_mentions_every_part() {
        let r = RuleIR::new("m:20:A:start@v1", "Process_Event", "e")
            .filter(RuleExpr::eq(RuleExpr::field("e", "nodeID"), RuleExpr::lit("SE")))
            .left_join(
                "Case_Variables",
                "cv",
                vec![("caseID".into(), RuleExpr::field("e", "caseID"))],
            )
            .guard(RuleExpr::not_exists(Scan::new(
                "Execution_State",
                "es",
                vec![("caseID".into(), RuleExpr::field("e", "caseID"))],
                RuleExpr::truth(),
            )))
            .action(Action::Delete {
                scan: Scan::new("Work_Items", "w", vec![], RuleExpr::truth()),
            });
        let text = r.pretty();
        assert!(text.contains("on Process_Event as e where e.nodeID = 'SE'"));
        assert!(text.contains("left join Case_Variables as cv on cv.caseID = e.caseID"));
        assert!(text.contains("when not exists (select 1 from Execution_State as es"));
        assert!(text.contains("delete from Work_Items as w where true"));
    }

    #[test]
    fn all_flattens() {
        let a = RuleExpr::field("e", "x");
        assert_eq!(RuleExpr::all(vec![RuleExpr::truth(), a.clone()]), a);
        assert_eq!(RuleExpr::all(vec![]), RuleExpr::truth());
    }
}
