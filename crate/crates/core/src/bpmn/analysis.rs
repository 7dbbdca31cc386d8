use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::model::{BpmnModel, NodeKind};

/// Strongly connected components of the control-flow graph.
#[derive(Debug, Clone)]
pub struct LoopInfo {
    component: BTreeMap<String, usize>,
    cyclic: BTreeSet<usize>,
}

impl LoopInfo {
    pub fn new(m: &BpmnModel) -> Self {
        let mut g = DiGraph::<&str, ()>::new();
        let idx: BTreeMap<&str, _> = m
            .nodes
            .iter()
            .map(|n| (n.id.as_str(), g.add_node(n.id.as_str())))
            .collect();
        for e in &m.edges {
            g.add_edge(idx[e.source.as_str()], idx[e.target.as_str()], ());
        }
        let mut component = BTreeMap::new();
        let mut cyclic = BTreeSet::new();
        for (ci, scc) in tarjan_scc(&g).into_iter().enumerate() {
            let self_loop = scc.len() == 1 && g.contains_edge(scc[0], scc[0]);
            if scc.len() > 1 || self_loop {
                cyclic.insert(ci);
            }
            for ni in scc {
                component.insert(g[ni].to_string(), ci);
            }
        }
        LoopInfo { component, cyclic }
    }

    /// True when the node lies on a cycle.
    pub fn in_loop(&self, node: &str) -> bool {
        self.component
            .get(node)
            .is_some_and(|c| self.cyclic.contains(c))
    }

    pub fn same_loop(&self, a: &str, b: &str) -> bool {
        self.in_loop(a) && self.component.get(a) == self.component.get(b)
    }

    /// An edge that leaves the cycle its source lies on.
    pub fn is_exit(&self, source: &str, target: &str) -> bool {
        self.in_loop(source) && !self.same_loop(source, target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinInputClassification {
    pub join: String,
    pub loopless: BTreeSet<String>,
    pub looping: BTreeSet<String>,
}

impl JoinInputClassification {
    /// A loop entry has inputs from both outside and inside its cycle.
    pub fn is_loop_entry(&self) -> bool {
        !self.looping.is_empty()
    }
}

/// Splits the inputs of every XOR- and OR-join. Predecessors on the join's
/// cycle are looping inputs, the others loopless. A join whose inputs all lie
/// on its cycle is not an entry; all its inputs count as loopless.
pub fn classify_join_inputs(m: &BpmnModel) -> Vec<JoinInputClassification> {
    let loops = LoopInfo::new(m);
    let mut out = Vec::new();
    for n in &m.nodes {
        if !matches!(n.kind, NodeKind::XorGateway | NodeKind::OrGateway) || !m.is_join(&n.id) {
            continue;
        }
        let preds: BTreeSet<String> = m.incoming(&n.id).iter().map(|e| e.source.clone()).collect();
        let (looping, loopless): (BTreeSet<_>, BTreeSet<_>) =
            preds.iter().cloned().partition(|p| loops.same_loop(p, &n.id));
        let c = if loopless.is_empty() {
            JoinInputClassification {
                join: n.id.clone(),
                loopless: looping,
                looping: BTreeSet::new(),
            }
        } else {
            JoinInputClassification {
                join: n.id.clone(),
                loopless,
                looping,
            }
        };
        out.push(c);
    }
    out
}
