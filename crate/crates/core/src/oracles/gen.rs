//! Seeded random models for differential runs.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

use crate::event::{Payload, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    And,
    Xor,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    Task,
    Seq(Vec<Block>),
    Gate(Gate, Vec<Block>),
    Loop(Box<Block>),
}

impl Block {
    pub fn size(&self) -> usize {
        match self {
            Block::Task => 1,
            Block::Seq(v) => v.iter().map(Block::size).sum(),
            Block::Gate(_, v) => 2 + v.iter().map(Block::size).sum::<usize>(),
            Block::Loop(b) => 2 + b.size(),
        }
    }
}

/// How a case variable steers one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    /// `var` picks one of `branches` outgoing edges by index.
    Xor { split: String, var: String, branches: usize },
    /// One boolean `var_i` per branch, at least one true.
    Or { split: String, var: String, branches: usize },
    /// `var = true` loops back.
    Loop { split: String, var: String },
}

impl Choice {
    pub fn split(&self) -> &str {
        match self {
            Choice::Xor { split, .. } | Choice::Or { split, .. } | Choice::Loop { split, .. } => split,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedBpmn {
    pub block: Block,
    pub source: String,
    pub choices: Vec<Choice>,
}

/// Nodes available to the body once the start and end events are placed.
pub const MAX_BODY: usize = 8;

fn split(rng: &mut impl Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut sizes = vec![1; parts];
    for _ in parts..total {
        let i = rng.gen_range(0..parts);
        sizes[i] += 1;
    }
    sizes
}

fn gen_block(rng: &mut impl Rng, budget: usize, loop_left: &mut bool) -> Block {
    let mut options = vec![0u8];
    if budget >= 2 {
        options.push(1);
    }
    if budget >= 4 {
        options.extend([2, 2]);
    }
    if budget >= 3 && *loop_left {
        options.push(3);
    }
    if budget >= 6 && *loop_left {
        options.extend([3, 3, 3]);
    }
    match *options.choose(rng).expect("non-empty") {
        1 => {
            let total = rng.gen_range(2..=budget);
            let sizes = split(rng, total, 2);
            Block::Seq(sizes.into_iter().map(|s| gen_block(rng, s, loop_left)).collect())
        }
        2 => {
            let gate = *[Gate::And, Gate::Xor, Gate::Or].choose(rng).expect("non-empty");
            let total = rng.gen_range(4..=budget) - 2;
            let n = rng.gen_range(2..=total.min(3));
            let sizes = split(rng, total, n);
            Block::Gate(gate, sizes.into_iter().map(|s| gen_block(rng, s, loop_left)).collect())
        }
        3 => {
            *loop_left = false;
            let body = rng.gen_range((budget - 2).min(4)..=budget - 2);
            Block::Loop(Box::new(gen_block(rng, body, loop_left)))
        }
        _ => Block::Task,
    }
}

struct Render {
    model_id: u64,
    nodes: String,
    edges: String,
    edge_count: usize,
    counter: usize,
    choices: Vec<Choice>,
}

impl Render {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }

    fn node(&mut self, tag: &str, id: &str) {
        let _ = writeln!(self.nodes, r#"    <{tag} id="{id}" name="{id}"/>"#);
    }

    fn edge(&mut self, from: &str, to: &str, cond: Option<&str>) {
        self.edge_count += 1;
        let id = format!("f{}", self.edge_count);
        match cond {
            None => {
                let _ = writeln!(self.edges, r#"    <sequenceFlow id="{id}" sourceRef="{from}" targetRef="{to}"/>"#);
            }
            Some(c) => {
                let _ = writeln!(
                    self.edges,
                    r#"    <sequenceFlow id="{id}" sourceRef="{from}" targetRef="{to}"><conditionExpression xsi:type="tFormalExpression">${{{c}}}</conditionExpression></sequenceFlow>"#
                );
            }
        }
    }

    /// Emits `b` after `pred`; returns the last node and the condition its
    /// outgoing edge must carry.
    fn block(&mut self, b: &Block, pred: &str, cond: Option<String>) -> (String, Option<String>) {
        match b {
            Block::Task => {
                let id = self.fresh("T");
                self.node("userTask", &id);
                self.edge(pred, &id, cond.as_deref());
                (id, None)
            }
            Block::Seq(parts) => {
                let mut at = (pred.to_string(), cond);
                for p in parts {
                    at = self.block(p, &at.0.clone(), at.1);
                }
                at
            }
            Block::Gate(g, branches) => {
                let n = self.fresh("G");
                let (s, j) = (format!("{n}s"), format!("{n}j"));
                let tag = match g {
                    Gate::And => "parallelGateway",
                    Gate::Xor => "exclusiveGateway",
                    Gate::Or => "inclusiveGateway",
                };
                self.node(tag, &s);
                self.node(tag, &j);
                self.edge(pred, &s, cond.as_deref());
                let var = format!("c_{s}");
                match g {
                    Gate::And => {}
                    Gate::Xor => self.choices.push(Choice::Xor {
                        split: s.clone(),
                        var: var.clone(),
                        branches: branches.len(),
                    }),
                    Gate::Or => self.choices.push(Choice::Or {
                        split: s.clone(),
                        var: var.clone(),
                        branches: branches.len(),
                    }),
                }
                for (i, br) in branches.iter().enumerate() {
                    let c = match g {
                        Gate::And => None,
                        Gate::Xor => Some(format!("{var} = {i}")),
                        Gate::Or => Some(format!("{var}_{i} = true")),
                    };
                    let (last, out) = self.block(br, &s, c);
                    self.edge(&last, &j, out.as_deref());
                }
                (j, None)
            }
            Block::Loop(body) => {
                let n = self.fresh("L");
                let (j, s) = (format!("{n}j"), format!("{n}s"));
                self.node("exclusiveGateway", &j);
                self.edge(pred, &j, cond.as_deref());
                let (last, out) = self.block(body, &j, None);
                self.node("exclusiveGateway", &s);
                self.edge(&last, &s, out.as_deref());
                let var = format!("again_{s}");
                self.edge(&s, &j, Some(&format!("{var} = true")));
                self.choices.push(Choice::Loop {
                    split: s.clone(),
                    var: var.clone(),
                });
                (s, Some(format!("{var} = false")))
            }
        }
    }
}

pub fn render_bpmn(block: &Block, model_id: u64) -> GeneratedBpmn {
    let mut r = Render {
        model_id,
        nodes: String::new(),
        edges: String::new(),
        edge_count: 0,
        counter: 0,
        choices: Vec::new(),
    };
    r.node("startEvent", "SE");
    let (last, out) = r.block(block, "SE", None);
    r.node("endEvent", "EE");
    r.edge(&last, "EE", out.as_deref());
    let source = format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance">
  <process id="generated{id}" modelId="{id}" version="1" isExecutable="true">
{nodes}{edges}  </process>
</definitions>
"#,
        id = r.model_id,
        nodes = r.nodes,
        edges = r.edges,
    );
    GeneratedBpmn {
        block: block.clone(),
        source,
        choices: r.choices,
    }
}

/// A structured model of at most ten nodes with at most one loop.
pub fn random_bpmn(rng: &mut impl Rng, model_id: u64) -> GeneratedBpmn {
    let mut loop_left = rng.gen_bool(0.5);
    let budget = rng.gen_range(1..=MAX_BODY).max(rng.gen_range(1..=MAX_BODY));
    let block = gen_block(rng, budget, &mut loop_left);
    render_bpmn(&block, model_id)
}

/// Fresh values for every split variable. Loops exit once `force_exit`.
pub fn choose<'a>(
    rng: &mut impl Rng,
    choices: impl IntoIterator<Item = &'a Choice>,
    force_exit: bool,
) -> Payload {
    let mut p = Payload::new();
    for c in choices {
        match c {
            Choice::Xor { var, branches, .. } => {
                p.insert(var.clone(), Scalar::Int(rng.gen_range(0..*branches as i64)));
            }
            Choice::Or { var, branches, .. } => {
                let mask = rng.gen_range(1..(1u32 << branches));
                for i in 0..*branches {
                    p.insert(format!("{var}_{i}"), Scalar::Bool(mask & (1 << i) != 0));
                }
            }
            Choice::Loop { var, .. } => {
                p.insert(var.clone(), Scalar::Bool(!force_exit && rng.gen_bool(0.4)));
            }
        }
    }
    p
}

/// JSON source of a random graph over at most eight events. Each relation
/// type gets its own density in `[0, 0.4]`; the marking is random.
pub fn random_dcr(rng: &mut impl Rng, model_id: u64) -> String {
    let n = rng.gen_range(1..=8);
    let events: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let mut relations = Vec::new();
    for kind in ["condition", "response", "include", "exclude"] {
        let density: f64 = rng.gen_range(0.0..=0.4);
        for a in &events {
            for b in &events {
                if rng.gen_bool(density) {
                    relations.push(json!({"type": kind, "source": a, "target": b}));
                }
            }
        }
    }
    let mut subset = |p: f64| -> Vec<String> {
        events.iter().filter(|_| rng.gen_bool(p)).cloned().collect()
    };
    let executed = subset(0.3);
    let pending = subset(0.4);
    let included = subset(0.7);
    json!({
        "id": format!("g{model_id}"),
        "modelId": model_id,
        "events": events.iter().map(|e| json!({"id": e})).collect::<Vec<_>>(),
        "relations": relations,
        "marking": {"executed": executed, "pending": pending, "included": included},
    })
    .to_string()
}
