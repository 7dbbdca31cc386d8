//! Rule templates over the `EventState` table.
//!
//! | phase | rules                                           |
//! |-------|-------------------------------------------------|
//! | 10    | case initialisation, rejection diagnostics      |
//! | 20    | marking update of an enabled event              |

use std::collections::{BTreeMap, BTreeSet};

use crate::bpmn::{emit_diagnostic, emit_event, on_event, rule_id, CompiledModel};
use crate::cql::{Action, Row, RuleExpr, RuleIR, Scan, Value};
use crate::event::{CaseId, LifecycleState, ModelId, Timestamp};
use crate::schema::EVENT_STATE;

use super::model::{DcrError, DcrModel, RelationKind};

pub const REJECTED: &str = "not-enabled";
pub const CLOSED: &str = "closed";

/// How a compiled graph is entered and left.
#[derive(Debug, Clone, Copy)]
pub enum Activation<'a> {
    /// `started(graph_id)` initialises the case.
    Standalone,
    /// `started(host)` initialises the inner state; completing a terminator
    /// erases it and completes the host.
    Hosted {
        host: &'a str,
        terminators: &'a BTreeSet<String>,
    },
}

fn pe(f: &str) -> RuleExpr {
    RuleExpr::field("pe", f)
}

fn s(f: &str) -> RuleExpr {
    RuleExpr::field("s", f)
}

fn case_keys() -> Vec<(String, RuleExpr)> {
    vec![("pmID".into(), pe("pmID")), ("caseID".into(), pe("caseID"))]
}

fn row_of(event: &str, pred: RuleExpr) -> Scan {
    let mut keys = case_keys();
    keys.push(("eventID".into(), RuleExpr::lit(event)));
    Scan::new(EVENT_STATE, "s", keys, pred)
}

fn rows_in(events: &[&str]) -> Scan {
    Scan::new(
        EVENT_STATE,
        "s",
        case_keys(),
        RuleExpr::In(
            Box::new(s("eventID")),
            events.iter().map(|e| RuleExpr::lit(*e)).collect(),
        ),
    )
}

fn is(f: &str, v: bool) -> RuleExpr {
    RuleExpr::eq(s(f), RuleExpr::lit(v))
}

/// Included, and every included condition source has happened.
pub(crate) fn enabled_expr(m: &DcrModel, event: &str) -> RuleExpr {
    let mut parts = vec![RuleExpr::exists(row_of(event, is("included", true)))];
    for c in m.conditions_of(event) {
        parts.push(RuleExpr::not_exists(row_of(
            c,
            RuleExpr::all(vec![is("included", true), is("happened", false)]),
        )));
    }
    RuleExpr::all(parts)
}

/// The initial `EventState` row of every event.
pub fn init_rows(m: &DcrModel, pm: ModelId, case: CaseId, ts: Timestamp) -> Vec<Row> {
    m.events
        .iter()
        .map(|e| {
            let mk = &m.marking;
            Row::from([
                ("pmID".to_string(), Value::from(pm.0)),
                ("caseID".to_string(), Value::from(case.0)),
                ("eventID".to_string(), Value::from(e.as_str())),
                ("happened".to_string(), Value::from(mk.executed.contains(e))),
                ("included".to_string(), Value::from(mk.included.contains(e))),
                ("restless".to_string(), Value::from(mk.pending.contains(e))),
                ("ts".to_string(), Value::from(ts.0)),
            ])
        })
        .collect()
}

fn init_rule(m: &DcrModel, id: String, owner: ModelId, trigger: &str) -> RuleIR {
    let mut r = on_event(id, owner, &[trigger], &[LifecycleState::Started]);
    let mk = &m.marking;
    for e in &m.events {
        r = r.action(Action::Insert {
            table: EVENT_STATE.into(),
            values: vec![
                ("pmID".into(), pe("pmID")),
                ("caseID".into(), pe("caseID")),
                ("eventID".into(), RuleExpr::lit(e.as_str())),
                ("happened".into(), RuleExpr::lit(mk.executed.contains(e))),
                ("included".into(), RuleExpr::lit(mk.included.contains(e))),
                ("restless".into(), RuleExpr::lit(mk.pending.contains(e))),
                ("ts".into(), pe("ts")),
            ],
        });
    }
    r
}

fn set_flag(targets: Vec<&str>, flag: &str, v: bool) -> Option<Action> {
    if targets.is_empty() {
        return None;
    }
    Some(Action::Update {
        scan: rows_in(&targets),
        set: vec![(flag.into(), RuleExpr::lit(v))],
    })
}

/// Rules of `m` deployed under `owner`, which differs from the graph's own
/// model id when it is hosted by a BPMN process.
pub(crate) fn dcr_rules(
    m: &DcrModel,
    owner: ModelId,
    version: u32,
    act: Activation<'_>,
) -> Vec<(String, RuleIR)> {
    let id = |phase: u8, node: &str, variant: &str| rule_id(owner, phase, node, variant, version);
    let mut out = Vec::new();
    let trigger = match act {
        Activation::Standalone => m.graph_id.as_str(),
        Activation::Hosted { host, .. } => host,
    };
    out.push((
        trigger.to_string(),
        init_rule(m, id(10, trigger, "init"), owner, trigger),
    ));
    let completed = [LifecycleState::Completed];
    let all: Vec<&str> = m.events.iter().map(String::as_str).collect();
    for e in &m.events {
        let n = e.as_str();
        let enabled = enabled_expr(m, n);
        let no_state = RuleExpr::not_exists(row_of(n, RuleExpr::truth()));
        let closed = on_event(id(10, n, "closed"), owner, &[n], &completed)
            .guard(no_state.clone())
            .action(emit_diagnostic(
                n,
                CLOSED,
                RuleExpr::lit(format!("{n}: no open DCR state for this case")),
            ));
        out.push((e.clone(), closed));
        let reject = on_event(id(10, n, "reject"), owner, &[n], &completed)
            .guard(RuleExpr::all(vec![
                RuleExpr::not(no_state),
                RuleExpr::not(enabled.clone()),
            ]))
            .action(emit_diagnostic(
                n,
                REJECTED,
                RuleExpr::lit(format!("{n} is not enabled")),
            ));
        out.push((e.clone(), reject));

        let mut apply = on_event(id(20, n, "apply"), owner, &[n], &completed)
            .guard(enabled)
            .action(Action::Update {
                scan: row_of(n, RuleExpr::truth()),
                set: vec![
                    ("happened".into(), RuleExpr::lit(true)),
                    ("restless".into(), RuleExpr::lit(false)),
                    ("ts".into(), pe("ts")),
                ],
            });
        let updates = [
            (RelationKind::Response, "restless", true),
            (RelationKind::Include, "included", true),
            (RelationKind::Exclude, "included", false),
        ];
        for (kind, flag, v) in updates {
            if let Some(a) = set_flag(m.targets(kind, n), flag, v) {
                apply = apply.action(a);
            }
        }
        if let Activation::Hosted { host, terminators } = act {
            if terminators.contains(e) {
                apply = apply
                    .action(Action::Delete { scan: rows_in(&all) })
                    .action(emit_event(
                        host,
                        RuleExpr::lit(LifecycleState::Completed.as_str()),
                        pe("payload"),
                    ));
            }
        }
        out.push((e.clone(), apply));
    }
    out
}

pub fn compile_dcr(m: &DcrModel) -> Result<CompiledModel, DcrError> {
    m.validate()?;
    let mut by_node: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut rules = Vec::new();
    for (node, r) in dcr_rules(m, m.model_id, m.version, Activation::Standalone) {
        by_node.entry(node).or_default().push(r.id.clone());
        rules.push(r);
    }
    rules.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CompiledModel {
        model_id: m.model_id,
        version: m.version,
        rules,
        by_node,
    })
}
