use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcr::{DcrModel, Marking, RelationKind};

/// Executed, pending (restless) and included events.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DcrMarking {
    pub ex: BTreeSet<String>,
    pub re: BTreeSet<String>,
    pub inc: BTreeSet<String>,
}

impl DcrMarking {
    pub fn initial(m: &DcrModel) -> Self {
        DcrMarking {
            ex: m.marking.executed.clone(),
            re: m.marking.pending.clone(),
            inc: m.marking.included.clone(),
        }
    }
}

impl From<Marking> for DcrMarking {
    fn from(m: Marking) -> Self {
        DcrMarking {
            ex: m.executed,
            re: m.pending,
            inc: m.included,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DcrStepError {
    #[error("unknown event {0}")]
    Unknown(String),
    #[error("event {0} is not enabled")]
    NotEnabled(String),
}

fn sources(m: &DcrModel, kind: RelationKind, target: &str) -> Vec<String> {
    m.relations(kind)
        .iter()
        .filter(|(_, t)| t == target)
        .map(|(s, _)| s.clone())
        .collect()
}

fn targets(m: &DcrModel, kind: RelationKind, source: &str) -> BTreeSet<String> {
    m.relations(kind)
        .iter()
        .filter(|(s, _)| s == source)
        .map(|(_, t)| t.clone())
        .collect()
}

pub fn dcr_enabled(m: &DcrModel, mk: &DcrMarking, e: &str) -> bool {
    mk.inc.contains(e)
        && sources(m, RelationKind::Condition, e)
            .iter()
            .all(|c| !mk.inc.contains(c) || mk.ex.contains(c))
}

/// Enabled events in declaration order.
pub fn dcr_enabled_set(m: &DcrModel, mk: &DcrMarking) -> Vec<String> {
    m.events
        .iter()
        .filter(|e| dcr_enabled(m, mk, e))
        .cloned()
        .collect()
}

/// No included event is pending.
pub fn dcr_accepting(mk: &DcrMarking) -> bool {
    mk.re.is_disjoint(&mk.inc)
}

pub fn dcr_step(m: &DcrModel, mk: &DcrMarking, e: &str) -> Result<DcrMarking, DcrStepError> {
    if !m.events.iter().any(|x| x == e) {
        return Err(DcrStepError::Unknown(e.to_string()));
    }
    if !dcr_enabled(m, mk, e) {
        return Err(DcrStepError::NotEnabled(e.to_string()));
    }
    let mut ex = mk.ex.clone();
    ex.insert(e.to_string());
    let includes = targets(m, RelationKind::Include, e);
    let excludes = targets(m, RelationKind::Exclude, e);
    let inc = mk
        .inc
        .union(&includes)
        .filter(|x| !excludes.contains(*x))
        .cloned()
        .collect();
    let mut re = mk.re.clone();
    re.remove(e);
    re.extend(targets(m, RelationKind::Response, e));
    Ok(DcrMarking { ex, re, inc })
}
