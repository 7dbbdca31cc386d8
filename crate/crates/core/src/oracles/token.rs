//! Token game over the BPMN subset with real and skip tokens.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bpmn::{BpmnModel, Edge, NodeKind};
use crate::event::{LifecycleState, Payload};
use crate::expr::evaluate_bool;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenMarking {
    pub real: BTreeMap<String, u32>,
    pub skip: BTreeMap<String, u32>,
}

impl TokenMarking {
    fn count(map: &BTreeMap<String, u32>, edge: &str) -> u32 {
        map.get(edge).copied().unwrap_or(0)
    }

    pub fn real_on(&self, edge: &str) -> u32 {
        Self::count(&self.real, edge)
    }

    pub fn skip_on(&self, edge: &str) -> u32 {
        Self::count(&self.skip, edge)
    }

    fn put(&mut self, edge: &str, real: bool) {
        let map = if real { &mut self.real } else { &mut self.skip };
        *map.entry(edge.to_string()).or_default() += 1;
    }

    fn take(&mut self, edge: &str, real: bool) -> bool {
        let map = if real { &mut self.real } else { &mut self.skip };
        match map.get_mut(edge) {
            Some(n) if *n > 0 => {
                *n -= 1;
                if *n == 0 {
                    map.remove(edge);
                }
                true
            }
            _ => false,
        }
    }

    fn has(&self, edge: &str) -> bool {
        self.real_on(edge) + self.skip_on(edge) > 0
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty() && self.skip.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fired {
    pub node: String,
    pub state: LifecycleState,
}

impl Fired {
    fn new(node: &str, state: LifecycleState) -> Self {
        Fired {
            node: node.to_string(),
            state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("the game has already started")]
    AlreadyStarted,
    #[error("model has no start event")]
    NoStart,
    #[error("{0} is not an active task")]
    NotActive(String),
    #[error("the case has finished")]
    Finished,
    #[error("condition on {edge}: {message}")]
    Condition { edge: String, message: String },
    #[error("{0} exceeded the step bound")]
    Diverges(String),
}

#[derive(Debug, Clone, Default)]
struct XorActivation {
    seen: BTreeSet<String>,
    fired: bool,
}

#[derive(Debug, Clone)]
pub struct TokenGame {
    m: BpmnModel,
    reach: BTreeMap<String, BTreeSet<String>>,
    pub marking: TokenMarking,
    active: BTreeSet<String>,
    vars: Payload,
    xor: BTreeMap<String, XorActivation>,
    or_activated: BTreeSet<String>,
    stalled: BTreeSet<String>,
    started: bool,
    finished: bool,
}

const STEP_BOUND: usize = 10_000;

impl TokenGame {
    pub fn new(m: &BpmnModel) -> Self {
        let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &m.edges {
            succ.entry(&e.source).or_default().push(&e.target);
        }
        let mut reach = BTreeMap::new();
        for n in &m.nodes {
            let mut seen = BTreeSet::new();
            let mut todo: Vec<&str> = succ.get(n.id.as_str()).cloned().unwrap_or_default();
            while let Some(x) = todo.pop() {
                if seen.insert(x.to_string()) {
                    todo.extend(succ.get(x).cloned().unwrap_or_default());
                }
            }
            reach.insert(n.id.clone(), seen);
        }
        TokenGame {
            m: m.clone(),
            reach,
            marking: TokenMarking::default(),
            active: BTreeSet::new(),
            vars: Payload::new(),
            xor: BTreeMap::new(),
            or_activated: BTreeSet::new(),
            stalled: BTreeSet::new(),
            started: false,
            finished: false,
        }
    }

    fn same_cycle(&self, a: &str, b: &str) -> bool {
        self.reach[a].contains(b) && self.reach[b].contains(a)
    }

    fn on_cycle(&self, a: &str) -> bool {
        self.reach[a].contains(a)
    }

    fn is_exit(&self, e: &Edge) -> bool {
        self.on_cycle(&e.source) && !self.same_cycle(&e.source, &e.target)
    }

    /// Inputs of a merging gateway split into (loopless, looping).
    fn wait_sets(&self, join: &str) -> (Vec<Edge>, Vec<Edge>) {
        let ins: Vec<Edge> = self.m.incoming(join).into_iter().cloned().collect();
        let (looping, loopless): (Vec<_>, Vec<_>) =
            ins.iter().cloned().partition(|e| self.same_cycle(&e.source, join));
        if loopless.is_empty() {
            (looping, Vec::new())
        } else {
            (loopless, looping)
        }
    }

    pub fn active(&self) -> Vec<String> {
        self.active.iter().cloned().collect()
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    /// AND-joins that saw a mix of real and skip tokens.
    pub fn stalled(&self) -> &BTreeSet<String> {
        &self.stalled
    }

    pub fn variables(&self) -> &Payload {
        &self.vars
    }

    pub fn start(&mut self, payload: Payload) -> Result<Vec<Fired>, TokenError> {
        if self.started {
            return Err(TokenError::AlreadyStarted);
        }
        let se = self
            .m
            .start_events()
            .first()
            .map(|s| s.to_string())
            .ok_or(TokenError::NoStart)?;
        self.started = true;
        self.vars = payload;
        let mut out = vec![
            Fired::new(&se, LifecycleState::Started),
            Fired::new(&se, LifecycleState::Completed),
        ];
        self.produce(&se, true)?;
        self.settle(&mut out)?;
        Ok(out)
    }

    pub fn complete(&mut self, task: &str, payload: Payload) -> Result<Vec<Fired>, TokenError> {
        if self.finished {
            return Err(TokenError::Finished);
        }
        if !self.active.remove(task) {
            return Err(TokenError::NotActive(task.to_string()));
        }
        self.vars.extend(payload);
        let mut out = vec![Fired::new(task, LifecycleState::Completed)];
        self.produce(task, true)?;
        self.settle(&mut out)?;
        Ok(out)
    }

    fn holds(&self, e: &Edge) -> Result<bool, TokenError> {
        if e.unconditional() {
            return Ok(true);
        }
        evaluate_bool(&e.condition, &self.vars).map_err(|err| TokenError::Condition {
            edge: e.id.clone(),
            message: err.to_string(),
        })
    }

    /// Places tokens on the outgoing edges of a node that finished.
    fn produce(&mut self, node: &str, completed: bool) -> Result<(), TokenError> {
        let outs: Vec<Edge> = self.m.outgoing(node).into_iter().cloned().collect();
        for e in outs {
            if !completed {
                self.marking.put(&e.id, false);
                continue;
            }
            let c = self.holds(&e)?;
            if !c && self.is_exit(&e) && !e.unconditional() {
                continue;
            }
            self.marking.put(&e.id, c);
        }
        Ok(())
    }

    fn settle(&mut self, out: &mut Vec<Fired>) -> Result<(), TokenError> {
        for _ in 0..STEP_BOUND {
            match self.token_step()? {
                Some(f) => out.extend(f),
                None => return Ok(()),
            }
        }
        Err(TokenError::Diverges(self.m.process_id.clone()))
    }

    /// Fires the first enabled node in declaration order.
    pub fn token_step(&mut self) -> Result<Option<Vec<Fired>>, TokenError> {
        let nodes: Vec<(String, NodeKind)> =
            self.m.nodes.iter().map(|n| (n.id.clone(), n.kind)).collect();
        for (id, kind) in nodes {
            if let Some(f) = self.try_fire(&id, kind)? {
                return Ok(Some(f));
            }
        }
        Ok(None)
    }

    fn try_fire(&mut self, id: &str, kind: NodeKind) -> Result<Option<Vec<Fired>>, TokenError> {
        let ins: Vec<Edge> = self.m.incoming(id).into_iter().cloned().collect();
        if ins.is_empty() || !ins.iter().any(|e| self.marking.has(&e.id)) {
            return Ok(None);
        }
        if ins.len() > 1 && kind.is_gateway() {
            return match kind {
                NodeKind::AndGateway => self.and_join(id, &ins),
                NodeKind::XorGateway => self.xor_join(id),
                _ => self.or_join(id),
            };
        }
        let e = &ins[0];
        let real = self.marking.take(&e.id, true);
        if !real {
            self.marking.take(&e.id, false);
        }
        self.finish(id, kind, real).map(Some)
    }

    fn finish(&mut self, id: &str, kind: NodeKind, real: bool) -> Result<Vec<Fired>, TokenError> {
        if !real {
            self.produce(id, false)?;
            return Ok(vec![Fired::new(id, LifecycleState::Skipped)]);
        }
        if matches!(kind, NodeKind::Task | NodeKind::IntermediateEvent | NodeKind::AdHocSubProcess) {
            self.active.insert(id.to_string());
            return Ok(vec![Fired::new(id, LifecycleState::Started)]);
        }
        if kind == NodeKind::EndEvent {
            self.finished = true;
        }
        self.produce(id, true)?;
        Ok(vec![Fired::new(id, LifecycleState::Completed)])
    }

    fn and_join(&mut self, id: &str, ins: &[Edge]) -> Result<Option<Vec<Fired>>, TokenError> {
        if !ins.iter().all(|e| self.marking.has(&e.id)) {
            return Ok(None);
        }
        let real = ins.iter().all(|e| self.marking.real_on(&e.id) > 0);
        let skip = ins.iter().all(|e| self.marking.skip_on(&e.id) > 0);
        if !real && !skip {
            self.stalled.insert(id.to_string());
            return Ok(None);
        }
        for e in ins {
            self.marking.take(&e.id, real);
        }
        self.finish(id, NodeKind::AndGateway, real).map(Some)
    }

    fn xor_join(&mut self, id: &str) -> Result<Option<Vec<Fired>>, TokenError> {
        let (loopless, looping) = self.wait_sets(id);
        let all: Vec<&Edge> = loopless.iter().chain(&looping).collect();
        let want: BTreeSet<String> = loopless.iter().map(|e| e.id.clone()).collect();
        if let Some(e) = all.iter().find(|e| self.marking.real_on(&e.id) > 0) {
            let e = e.id.clone();
            self.marking.take(&e, true);
            let act = self.xor.entry(id.to_string()).or_default();
            if want.contains(&e) {
                act.seen.insert(e);
                act.fired = true;
            }
            if act.seen.is_superset(&want) {
                *act = XorActivation::default();
            }
            return self.finish(id, NodeKind::XorGateway, true).map(Some);
        }
        for e in &looping {
            if self.marking.take(&e.id, false) {
                return Ok(Some(Vec::new()));
            }
        }
        let e = loopless
            .iter()
            .find(|e| self.marking.skip_on(&e.id) > 0)
            .map(|e| e.id.clone())
            .expect("a token is present");
        self.marking.take(&e, false);
        let act = self.xor.entry(id.to_string()).or_default();
        act.seen.insert(e);
        if !act.seen.is_superset(&want) {
            return Ok(Some(Vec::new()));
        }
        let fired = act.fired;
        *act = XorActivation::default();
        if fired {
            return Ok(Some(Vec::new()));
        }
        self.finish(id, NodeKind::XorGateway, false).map(Some)
    }

    fn or_join(&mut self, id: &str) -> Result<Option<Vec<Fired>>, TokenError> {
        let (loopless, looping) = self.wait_sets(id);
        let wait = if looping.is_empty() || !self.or_activated.contains(id) {
            loopless
        } else {
            looping
        };
        if !wait.iter().all(|e| self.marking.has(&e.id)) {
            return Ok(None);
        }
        let mut any_real = false;
        for e in &wait {
            if self.marking.take(&e.id, true) {
                any_real = true;
            } else {
                self.marking.take(&e.id, false);
            }
        }
        let first = !self.or_activated.contains(id);
        self.or_activated.insert(id.to_string());
        if !any_real && !first {
            return Ok(Some(Vec::new()));
        }
        self.finish(id, NodeKind::OrGateway, any_real).map(Some)
    }
}
