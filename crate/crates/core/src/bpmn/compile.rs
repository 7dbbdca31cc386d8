//! Rule templates for the BPMN subset.
//!
//! Rule ids are `{model}:{phase}:{node}:{variant}@v{version}`. Rules fire in
//! id order, so the phase number fixes the order in which the rules reacting
//! to one record run:
//!
//! | phase | rules                                                   |
//! |-------|---------------------------------------------------------|
//! | 00    | merge of the record into `Execution_State`              |
//! | 10    | case-variable insert and update                         |
//! | 20    | routing: successors, joins                              |
//! | 40    | end-of-case purge                                       |
//! | 50    | work-item offers                                        |

use std::collections::BTreeMap;

use crate::cql::{Action, RuleExpr, RuleIR, Scan};
use crate::event::{LifecycleState, ModelId};
use crate::expr::CmpOp;
use crate::schema::{CASE_VARIABLES, DIAGNOSTICS, EXECUTION_STATE, PROCESS_EVENT, WORK_ITEMS};

use super::analysis::{classify_join_inputs, JoinInputClassification, LoopInfo};
use super::model::{BpmnError, BpmnModel, Edge, NodeKind};

const STARTED: &str = "started";
const COMPLETED: &str = "completed";
const SKIPPED: &str = "skipped";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrJoinMode {
    /// Wait for loopless inputs on first activation and looping inputs later.
    #[default]
    LoopAware,
    /// Always wait for every input.
    Naive,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompileOptions {
    pub or_join: OrJoinMode,
}

#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub model_id: ModelId,
    pub version: u32,
    pub rules: Vec<RuleIR>,
    /// Rule ids per node; the global merge rule is filed under `*`.
    pub by_node: BTreeMap<String, Vec<String>>,
}

impl CompiledModel {
    pub fn pretty(&self) -> String {
        self.rules
            .iter()
            .map(RuleIR::pretty)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn rules_of(&self, node: &str) -> Vec<&RuleIR> {
        let ids = self.by_node.get(node).cloned().unwrap_or_default();
        self.rules.iter().filter(|r| ids.contains(&r.id)).collect()
    }
}

pub fn rule_id(model: ModelId, phase: u8, node: &str, variant: &str, version: u32) -> String {
    format!("{}:{phase:02}:{node}:{variant}@v{version}", model.0)
}

fn pe(f: &str) -> RuleExpr {
    RuleExpr::field("pe", f)
}

fn lit(s: &str) -> RuleExpr {
    RuleExpr::lit(s)
}

fn strs(v: &[&str]) -> Vec<RuleExpr> {
    v.iter().map(|s| lit(s)).collect()
}

fn case_keys() -> Vec<(String, RuleExpr)> {
    vec![("pmID".into(), pe("pmID")), ("caseID".into(), pe("caseID"))]
}

fn node_keys(node: &str) -> Vec<(String, RuleExpr)> {
    let mut k = case_keys();
    k.push(("nodeID".into(), lit(node)));
    k
}

/// Emits a process event for `node` in the trigger's case.
pub(crate) fn emit_event(node: &str, state: RuleExpr, payload: RuleExpr) -> Action {
    Action::Emit {
        stream: PROCESS_EVENT.into(),
        fields: vec![
            ("pmID".into(), pe("pmID")),
            ("caseID".into(), pe("caseID")),
            ("nodeID".into(), lit(node)),
            ("state".into(), state),
            ("payload".into(), payload),
            ("ts".into(), pe("ts")),
        ],
    }
}

pub(crate) fn emit_diagnostic(node: &str, kind: &str, message: RuleExpr) -> Action {
    Action::Emit {
        stream: DIAGNOSTICS.into(),
        fields: vec![
            ("pmID".into(), pe("pmID")),
            ("caseID".into(), pe("caseID")),
            ("nodeID".into(), lit(node)),
            ("kind".into(), lit(kind)),
            ("message".into(), message),
            ("ts".into(), pe("ts")),
        ],
    }
}

pub(crate) fn on_event(
    id: String,
    model: ModelId,
    nodes: &[&str],
    states: &[LifecycleState],
) -> RuleIR {
    let mut parts = vec![RuleExpr::eq(pe("pmID"), RuleExpr::lit(model.0))];
    parts.push(node_in(nodes));
    parts.push(state_in(states));
    RuleIR::new(id, PROCESS_EVENT, "pe").filter(RuleExpr::all(parts))
}

fn node_in(nodes: &[&str]) -> RuleExpr {
    if nodes.len() == 1 {
        RuleExpr::eq(pe("nodeID"), lit(nodes[0]))
    } else {
        RuleExpr::In(Box::new(pe("nodeID")), strs(nodes))
    }
}

fn state_in(states: &[LifecycleState]) -> RuleExpr {
    if states.len() == 1 {
        RuleExpr::eq(pe("state"), lit(states[0].as_str()))
    } else {
        RuleExpr::In(
            Box::new(pe("state")),
            states.iter().map(|s| lit(s.as_str())).collect(),
        )
    }
}

fn with_variables(r: RuleIR) -> RuleIR {
    r.left_join(CASE_VARIABLES, "cv", case_keys())
}

fn variables() -> RuleExpr {
    RuleExpr::field("cv", "variables")
}

/// The edge condition over the joined case variables.
fn condition(e: &Edge) -> RuleExpr {
    if e.unconditional() {
        RuleExpr::truth()
    } else {
        RuleExpr::eval(variables(), e.condition.clone())
    }
}

const DONE: [LifecycleState; 2] = [LifecycleState::Completed, LifecycleState::Skipped];

struct Ctx<'a> {
    m: &'a BpmnModel,
    loops: LoopInfo,
    classes: BTreeMap<String, JoinInputClassification>,
    opts: CompileOptions,
    out: Vec<RuleIR>,
    by_node: BTreeMap<String, Vec<String>>,
}

impl Ctx<'_> {
    fn id(&self, phase: u8, node: &str, variant: &str) -> String {
        rule_id(self.m.model_id, phase, node, variant, self.m.version)
    }

    fn push(&mut self, node: &str, r: RuleIR) {
        self.by_node.entry(node.into()).or_default().push(r.id.clone());
        self.out.push(r);
    }

    fn merge_rule(&mut self) {
        let stamp = || {
            vec![
                ("state".into(), pe("state")),
                ("ts".into(), pe("ts")),
                ("seq".into(), RuleExpr::Position),
            ]
        };
        let starts = self.m.start_events();
        let all: Vec<&str> = self.m.nodes.iter().map(|n| n.id.as_str()).collect();
        let id = self.id(0, "*", "merge");
        let started_starts = RuleExpr::all(vec![
            RuleExpr::eq(pe("state"), lit(STARTED)),
            node_in(&starts),
        ]);
        let r = RuleIR::new(id, PROCESS_EVENT, "pe")
            .filter(RuleExpr::all(vec![
                RuleExpr::eq(pe("pmID"), RuleExpr::lit(self.m.model_id.0)),
                node_in(&all),
                RuleExpr::any(vec![state_in(&DONE), started_starts]),
            ]))
            .action(Action::MergeUpsert {
                table: EXECUTION_STATE.into(),
                alias: "es".into(),
                key: vec![
                    ("pmID".into(), pe("pmID")),
                    ("caseID".into(), pe("caseID")),
                    ("nodeID".into(), pe("nodeID")),
                ],
                on_match: stamp(),
                on_insert: stamp(),
            });
        self.push("*", r);
    }

    fn start_event(&mut self, se: &str) {
        let m = self.m.model_id;
        let vars = on_event(self.id(10, se, "vars"), m, &[se], &[LifecycleState::Started]).action(
            Action::MergeUpsert {
                table: CASE_VARIABLES.into(),
                alias: "cv".into(),
                key: case_keys(),
                on_match: vec![("variables".into(), pe("payload"))],
                on_insert: vec![("variables".into(), pe("payload"))],
            },
        );
        self.push(se, vars);
        let done = on_event(self.id(20, se, "complete"), m, &[se], &[LifecycleState::Started])
            .action(emit_event(se, lit(COMPLETED), pe("payload")));
        self.push(se, done);
    }

    /// Single-input routing shared by tasks, events and split gateways.
    fn route(&mut self, node: &str, on: &str) {
        let e = self.m.incoming(node)[0].clone();
        let cond = condition(&e);
        let mut r = with_variables(on_event(
            self.id(20, node, "route"),
            self.m.model_id,
            &[&e.source],
            &DONE,
        ));
        if self.loops.is_exit(&e.source, node) && !e.unconditional() {
            r = r.guard(RuleExpr::any(vec![
                RuleExpr::eq(pe("state"), lit(SKIPPED)),
                cond.clone(),
            ]));
        }
        let state = RuleExpr::case(
            vec![(
                RuleExpr::all(vec![RuleExpr::eq(pe("state"), lit(COMPLETED)), cond]),
                lit(on),
            )],
            lit(SKIPPED),
        );
        let r = r.action(emit_event(node, state, variables()));
        self.push(node, r);
    }

    fn task_bookkeeping(&mut self, node: &str, offered: bool) {
        let m = self.m.model_id;
        let update = on_event(self.id(10, node, "vars"), m, &[node], &[LifecycleState::Completed])
            .action(Action::Update {
                scan: Scan::new(CASE_VARIABLES, "cv", case_keys(), RuleExpr::truth()),
                set: vec![(
                    "variables".into(),
                    RuleExpr::merge(variables(), pe("payload")),
                )],
            });
        self.push(node, update);
        if !offered {
            return;
        }
        let offer = on_event(self.id(50, node, "offer"), m, &[node], &[LifecycleState::Started])
            .action(Action::MergeUpsert {
                table: WORK_ITEMS.into(),
                alias: "w".into(),
                key: node_keys(node),
                on_match: vec![("ts".into(), pe("ts"))],
                on_insert: vec![("ts".into(), pe("ts"))],
            });
        self.push(node, offer);
        let done = on_event(self.id(50, node, "done"), m, &[node], &[LifecycleState::Completed])
            .action(Action::Delete {
                scan: Scan::new(WORK_ITEMS, "w", node_keys(node), RuleExpr::truth()),
            });
        self.push(node, done);
    }

    fn end_purge(&mut self, ee: &str) {
        let r = on_event(
            self.id(40, ee, "purge"),
            self.m.model_id,
            &[ee],
            &[LifecycleState::Completed],
        )
        .action(Action::Delete {
            scan: Scan::new(
                EXECUTION_STATE,
                "h",
                case_keys(),
                RuleExpr::all(vec![
                    RuleExpr::ne(RuleExpr::field("h", "nodeID"), pe("nodeID")),
                    RuleExpr::eq(RuleExpr::field("h", "state"), lit(COMPLETED)),
                ]),
            ),
        });
        self.push(ee, r);
    }

    fn join_rule(&self, join: &str, variant: &str, triggers: &[&str]) -> RuleIR {
        with_variables(on_event(
            self.id(20, join, variant),
            self.m.model_id,
            triggers,
            &DONE,
        ))
        .left_join(EXECUTION_STATE, "jr", node_keys(join))
    }

    /// A state-table row of `pred` newer than the join's last activation,
    /// whose state seen through the edge into the join satisfies `want`.
    fn fresh_row(&self, join: &str, pred: &str, want: Option<&str>) -> RuleExpr {
        let e = self
            .m
            .incoming(join)
            .into_iter()
            .find(|e| e.source == pred)
            .expect("pred of join");
        let h = |f: &str| RuleExpr::field("h", f);
        let jr = |f: &str| RuleExpr::field("jr", f);
        let fresh = RuleExpr::any(vec![
            RuleExpr::IsNull(Box::new(jr("ts"))),
            RuleExpr::cmp(CmpOp::Gt, h("ts"), jr("ts")),
            RuleExpr::all(vec![
                RuleExpr::eq(h("ts"), jr("ts")),
                RuleExpr::cmp(CmpOp::Gt, h("seq"), jr("seq")),
            ]),
        ]);
        let c = condition(e);
        let exit = self.loops.is_exit(pred, join) && !e.unconditional();
        let state = match want {
            None if exit => RuleExpr::any(vec![
                RuleExpr::eq(h("state"), lit(SKIPPED)),
                RuleExpr::all(vec![RuleExpr::eq(h("state"), lit(COMPLETED)), c]),
            ]),
            None => RuleExpr::In(Box::new(h("state")), strs(&[COMPLETED, SKIPPED])),
            Some(COMPLETED) => {
                RuleExpr::all(vec![RuleExpr::eq(h("state"), lit(COMPLETED)), c])
            }
            Some(_) if e.unconditional() || exit => RuleExpr::eq(h("state"), lit(SKIPPED)),
            Some(_) => RuleExpr::any(vec![
                RuleExpr::eq(h("state"), lit(SKIPPED)),
                RuleExpr::all(vec![
                    RuleExpr::eq(h("state"), lit(COMPLETED)),
                    RuleExpr::not(c),
                ]),
            ]),
        };
        RuleExpr::exists(Scan::new(
            EXECUTION_STATE,
            "h",
            node_keys(pred),
            RuleExpr::all(vec![fresh, state]),
        ))
    }

    fn all_fresh(&self, join: &str, preds: &[&str], want: Option<&str>) -> RuleExpr {
        RuleExpr::all(
            preds
                .iter()
                .map(|p| self.fresh_row(join, p, want))
                .collect(),
        )
    }

    fn any_completed(&self, join: &str, preds: &[&str]) -> RuleExpr {
        RuleExpr::any(
            preds
                .iter()
                .map(|p| self.fresh_row(join, p, Some(COMPLETED)))
                .collect(),
        )
    }

    fn preds(&self, node: &str) -> Vec<String> {
        self.m
            .incoming(node)
            .iter()
            .map(|e| e.source.clone())
            .collect()
    }

    fn and_join(&mut self, j: &str) {
        let preds = self.preds(j);
        let p: Vec<&str> = preds.iter().map(String::as_str).collect();
        let all_c = self.all_fresh(j, &p, Some(COMPLETED));
        let all_s = self.all_fresh(j, &p, Some(SKIPPED));
        let fire = self
            .join_rule(j, "route", &p)
            .guard(RuleExpr::any(vec![all_c.clone(), all_s.clone()]))
            .action(emit_event(
                j,
                RuleExpr::case(vec![(all_c.clone(), lit(COMPLETED))], lit(SKIPPED)),
                variables(),
            ));
        self.push(j, fire);
        let stall = self
            .join_rule(j, "mixed", &p)
            .guard(RuleExpr::all(vec![
                self.all_fresh(j, &p, None),
                RuleExpr::not(all_c),
                RuleExpr::not(all_s),
            ]))
            .action(emit_diagnostic(
                j,
                "mixed-join",
                lit("AND-join received both completed and skipped inputs"),
            ));
        self.push(j, stall);
    }

    fn xor_join(&mut self, j: &str) {
        let class = self.classes[j].clone();
        let loopless: Vec<&str> = class.loopless.iter().map(String::as_str).collect();
        let all: Vec<String> = self.preds(j);
        let all: Vec<&str> = all.iter().map(String::as_str).collect();
        let completed_input = RuleExpr::any(
            self.m
                .incoming(j)
                .iter()
                .map(|e| {
                    RuleExpr::all(vec![
                        RuleExpr::eq(pe("nodeID"), lit(&e.source)),
                        RuleExpr::eq(pe("state"), lit(COMPLETED)),
                        condition(e),
                    ])
                })
                .collect(),
        );
        let all_skipped = RuleExpr::all(vec![
            node_in(&loopless),
            self.all_fresh(j, &loopless, Some(SKIPPED)),
        ]);
        let r = self
            .join_rule(j, "route", &all)
            .guard(RuleExpr::any(vec![completed_input.clone(), all_skipped]))
            .action(emit_event(
                j,
                RuleExpr::case(vec![(completed_input, lit(COMPLETED))], lit(SKIPPED)),
                variables(),
            ));
        self.push(j, r);
    }

    fn or_join(&mut self, j: &str) {
        let class = self.classes[j].clone();
        let all = self.preds(j);
        let all: Vec<&str> = all.iter().map(String::as_str).collect();
        if self.opts.or_join == OrJoinMode::Naive || !class.is_loop_entry() {
            let r = self.or_rule(j, "route", &all, None);
            self.push(j, r);
            return;
        }
        let loopless: Vec<&str> = class.loopless.iter().map(String::as_str).collect();
        let looping: Vec<&str> = class.looping.iter().map(String::as_str).collect();
        let first = self.or_rule(j, "first", &loopless, Some(true));
        self.push(j, first);
        let again = self.or_rule(j, "again", &looping, Some(false));
        self.push(j, again);
    }

    /// `activation`: `Some(true)` only before the first activation,
    /// `Some(false)` only after it, `None` always.
    fn or_rule(&self, j: &str, variant: &str, wait: &[&str], activation: Option<bool>) -> RuleIR {
        let no_row = RuleExpr::IsNull(Box::new(RuleExpr::field("jr", "ts")));
        let any_c = self.any_completed(j, wait);
        let mut guard = vec![self.all_fresh(j, wait, None)];
        match activation {
            Some(true) => guard.insert(0, no_row),
            Some(false) => {
                guard.insert(0, RuleExpr::not(no_row));
                guard.push(any_c.clone());
            }
            None => {}
        }
        self.join_rule(j, variant, wait)
            .guard(RuleExpr::all(guard))
            .action(emit_event(
                j,
                RuleExpr::case(vec![(any_c, lit(COMPLETED))], lit(SKIPPED)),
                variables(),
            ))
    }
}

pub fn compile_bpmn(m: &BpmnModel) -> Result<CompiledModel, BpmnError> {
    compile_bpmn_with(m, CompileOptions::default())
}

pub fn compile_bpmn_with(m: &BpmnModel, opts: CompileOptions) -> Result<CompiledModel, BpmnError> {
    m.validate()?;
    let mut cx = Ctx {
        m,
        loops: LoopInfo::new(m),
        classes: classify_join_inputs(m)
            .into_iter()
            .map(|c| (c.join.clone(), c))
            .collect(),
        opts,
        out: Vec::new(),
        by_node: BTreeMap::new(),
    };
    cx.merge_rule();
    for n in &m.nodes {
        let id = n.id.as_str();
        match n.kind {
            NodeKind::StartEvent => cx.start_event(id),
            NodeKind::EndEvent => {
                cx.route(id, COMPLETED);
                cx.end_purge(id);
            }
            NodeKind::Task | NodeKind::IntermediateEvent => {
                cx.route(id, STARTED);
                cx.task_bookkeeping(id, true);
            }
            NodeKind::AdHocSubProcess => {
                cx.route(id, STARTED);
                cx.task_bookkeeping(id, false);
            }
            k if k.is_gateway() && m.is_join(id) => match k {
                NodeKind::AndGateway => cx.and_join(id),
                NodeKind::XorGateway => cx.xor_join(id),
                _ => cx.or_join(id),
            },
            _ => cx.route(id, COMPLETED),
        }
    }
    let mut rules = cx.out;
    rules.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CompiledModel {
        model_id: m.model_id,
        version: m.version,
        rules,
        by_node: cx.by_node,
    })
}
