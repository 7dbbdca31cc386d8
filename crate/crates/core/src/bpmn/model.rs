use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::event::ModelId;
use crate::expr::{Expression, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    StartEvent,
    EndEvent,
    Task,
    IntermediateEvent,
    XorGateway,
    AndGateway,
    OrGateway,
    AdHocSubProcess,
}

impl NodeKind {
    pub fn is_gateway(self) -> bool {
        matches!(
            self,
            NodeKind::XorGateway | NodeKind::AndGateway | NodeKind::OrGateway
        )
    }

    /// Nodes whose completion is reported by an external agent.
    pub fn is_agent_driven(self) -> bool {
        matches!(self, NodeKind::Task | NodeKind::IntermediateEvent)
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::StartEvent => "startEvent",
            NodeKind::EndEvent => "endEvent",
            NodeKind::Task => "task",
            NodeKind::IntermediateEvent => "intermediateEvent",
            NodeKind::XorGateway => "exclusiveGateway",
            NodeKind::AndGateway => "parallelGateway",
            NodeKind::OrGateway => "inclusiveGateway",
            NodeKind::AdHocSubProcess => "adHocSubProcess",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub source: String,
    pub target: String,
    pub condition: Arc<Expression>,
}

impl Edge {
    pub fn unconditional(&self) -> bool {
        self.condition.is_constant_true()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpmnModel {
    pub model_id: ModelId,
    pub version: u32,
    pub process_id: String,
    /// In declaration order.
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub data_names: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BpmnError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("no process element found")]
    NoProcess,
    #[error("unsupported element {0}")]
    Unsupported(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("sequence flow {flow} refers to unknown node {node}")]
    DanglingEdge { flow: String, node: String },
    #[error("{kind} {node} has {count} incoming edges; at most one is allowed")]
    MultipleIncoming {
        kind: &'static str,
        node: String,
        count: usize,
    },
    #[error("{kind} {node} has {count} outgoing edges; at most one is allowed")]
    MultipleOutgoing {
        kind: &'static str,
        node: String,
        count: usize,
    },
    #[error("{0}")]
    Structure(String),
    #[error("condition on {flow}: {source}")]
    Condition {
        flow: String,
        #[source]
        source: ParseError,
    },
    #[error("cannot diff models {0} and {1}")]
    ModelMismatch(ModelId, ModelId),
}

impl BpmnModel {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn kind(&self, id: &str) -> Option<NodeKind> {
        self.node(id).map(|n| n.kind)
    }

    pub fn incoming(&self, id: &str) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.target == id).collect()
    }

    pub fn outgoing(&self, id: &str) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.source == id).collect()
    }

    pub fn start_events(&self) -> Vec<&str> {
        self.nodes_of(NodeKind::StartEvent)
    }

    pub fn end_events(&self) -> Vec<&str> {
        self.nodes_of(NodeKind::EndEvent)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Gateways with more than one incoming edge.
    pub fn is_join(&self, id: &str) -> bool {
        self.kind(id).is_some_and(NodeKind::is_gateway) && self.incoming(id).len() > 1
    }

    /// Checks the structural rules of the supported subset.
    pub fn validate(&self) -> Result<(), BpmnError> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(BpmnError::DuplicateId(n.id.clone()));
            }
        }
        for e in &self.edges {
            if !ids.insert(e.id.as_str()) {
                return Err(BpmnError::DuplicateId(e.id.clone()));
            }
            for end in [&e.source, &e.target] {
                if self.node(end).is_none() {
                    return Err(BpmnError::DanglingEdge {
                        flow: e.id.clone(),
                        node: end.clone(),
                    });
                }
            }
        }
        if self.start_events().is_empty() {
            return Err(BpmnError::Structure("model has no start event".into()));
        }
        for n in &self.nodes {
            let (inc, out) = (self.incoming(&n.id).len(), self.outgoing(&n.id).len());
            if !n.kind.is_gateway() {
                if inc > 1 {
                    return Err(BpmnError::MultipleIncoming {
                        kind: n.kind.name(),
                        node: n.id.clone(),
                        count: inc,
                    });
                }
                if out > 1 {
                    return Err(BpmnError::MultipleOutgoing {
                        kind: n.kind.name(),
                        node: n.id.clone(),
                        count: out,
                    });
                }
            }
            match n.kind {
                NodeKind::StartEvent if inc > 0 => {
                    return Err(BpmnError::Structure(format!(
                        "start event {} has incoming edges",
                        n.id
                    )))
                }
                NodeKind::EndEvent if out > 0 => {
                    return Err(BpmnError::Structure(format!(
                        "end event {} has outgoing edges",
                        n.id
                    )))
                }
                NodeKind::StartEvent => {}
                _ if inc == 0 => {
                    return Err(BpmnError::Structure(format!(
                        "{} {} is unreachable: no incoming edge",
                        n.kind.name(),
                        n.id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeChange {
    Unchanged,
    Added,
    Removed,
    Modified,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelDiff {
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub modified: BTreeSet<String>,
    pub unchanged: BTreeSet<String>,
}

impl ModelDiff {
    pub fn change(&self, node: &str) -> Option<NodeChange> {
        if self.added.contains(node) {
            Some(NodeChange::Added)
        } else if self.removed.contains(node) {
            Some(NodeChange::Removed)
        } else if self.modified.contains(node) {
            Some(NodeChange::Modified)
        } else if self.unchanged.contains(node) {
            Some(NodeChange::Unchanged)
        } else {
            None
        }
    }
}

fn inputs(m: &BpmnModel, id: &str) -> BTreeMap<String, String> {
    m.incoming(id)
        .into_iter()
        .map(|e| (e.source.clone(), e.condition.to_string()))
        .collect()
}

/// Node-level change set between two versions of one model. A node is
/// modified when its kind, its set of predecessors or any incoming
/// condition changed.
pub fn diff_models(old: &BpmnModel, new: &BpmnModel) -> Result<ModelDiff, BpmnError> {
    if old.model_id != new.model_id {
        return Err(BpmnError::ModelMismatch(old.model_id, new.model_id));
    }
    let mut d = ModelDiff::default();
    for n in &new.nodes {
        match old.node(&n.id) {
            None => {
                d.added.insert(n.id.clone());
            }
            Some(o) if o.kind != n.kind || inputs(old, &n.id) != inputs(new, &n.id) => {
                d.modified.insert(n.id.clone());
            }
            Some(_) => {
                d.unchanged.insert(n.id.clone());
            }
        }
    }
    for o in &old.nodes {
        if new.node(&o.id).is_none() {
            d.removed.insert(o.id.clone());
        }
    }
    Ok(d)
}
