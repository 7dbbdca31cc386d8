//! BPMN processes hosting DCR graphs in ad-hoc sub-processes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::bpmn::{compile_bpmn, BpmnError, BpmnModel, CompiledModel, NodeKind};
use crate::dcr::{dcr_rules, Activation, DcrError, DcrModel};

#[derive(Debug, Clone, PartialEq)]
pub struct HybridBinding {
    pub host: String,
    pub inner: DcrModel,
    pub terminators: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub top: BpmnModel,
    pub bindings: Vec<HybridBinding>,
}

#[derive(Debug, Error)]
pub enum HybridError {
    #[error(transparent)]
    Bpmn(#[from] BpmnError),
    #[error(transparent)]
    Dcr(#[from] DcrError),
    #[error("unknown host node {0}")]
    UnknownHost(String),
    #[error("host {0} is not an ad-hoc sub-process")]
    NotAdHoc(String),
    #[error("host {0} is bound twice")]
    DuplicateHost(String),
    #[error("binding for {0} has no terminator")]
    NoTerminator(String),
    #[error("terminator {terminator} is not an event of the graph hosted by {host}")]
    UnknownTerminator { host: String, terminator: String },
    #[error("inner event {0} collides with another node or event id")]
    Collision(String),
}

impl HybridModel {
    pub fn binding_of_event(&self, event: &str) -> Option<&HybridBinding> {
        self.bindings.iter().find(|b| b.inner.has_event(event))
    }

    pub fn binding(&self, host: &str) -> Option<&HybridBinding> {
        self.bindings.iter().find(|b| b.host == host)
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        self.top.validate()?;
        let mut ids: BTreeSet<&str> = self.top.nodes.iter().map(|n| n.id.as_str()).collect();
        let mut hosts = BTreeSet::new();
        for b in &self.bindings {
            b.inner.validate()?;
            match self.top.kind(&b.host) {
                None => return Err(HybridError::UnknownHost(b.host.clone())),
                Some(NodeKind::AdHocSubProcess) => {}
                Some(_) => return Err(HybridError::NotAdHoc(b.host.clone())),
            }
            if !hosts.insert(b.host.as_str()) {
                return Err(HybridError::DuplicateHost(b.host.clone()));
            }
            if b.terminators.is_empty() {
                return Err(HybridError::NoTerminator(b.host.clone()));
            }
            if let Some(t) = b.terminators.iter().find(|t| !b.inner.has_event(t)) {
                return Err(HybridError::UnknownTerminator {
                    host: b.host.clone(),
                    terminator: t.clone(),
                });
            }
            for e in &b.inner.events {
                if !ids.insert(e.as_str()) {
                    return Err(HybridError::Collision(e.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Rules of the top-level process plus, per binding, the inner graph's rules
/// keyed on the top-level model id.
pub fn compile_hybrid(h: &HybridModel) -> Result<CompiledModel, HybridError> {
    h.validate()?;
    let mut c = compile_bpmn(&h.top)?;
    for b in &h.bindings {
        let act = Activation::Hosted {
            host: &b.host,
            terminators: &b.terminators,
        };
        for (node, r) in dcr_rules(&b.inner, h.top.model_id, h.top.version, act) {
            c.by_node.entry(node).or_default().push(r.id.clone());
            c.rules.push(r);
        }
    }
    c.rules.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(c)
}
