use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::ModelId;

pub type Relation = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Condition,
    Response,
    Include,
    Exclude,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] = [
        RelationKind::Condition,
        RelationKind::Response,
        RelationKind::Include,
        RelationKind::Exclude,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Condition => "condition",
            RelationKind::Response => "response",
            RelationKind::Include => "include",
            RelationKind::Exclude => "exclude",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        RelationKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// (Ex, Re, In).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Marking {
    pub executed: BTreeSet<String>,
    pub pending: BTreeSet<String>,
    pub included: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcrModel {
    pub model_id: ModelId,
    pub version: u32,
    /// Node id whose started event initialises a standalone case.
    pub graph_id: String,
    /// In declaration order.
    pub events: Vec<String>,
    pub labels: BTreeMap<String, String>,
    pub conditions: BTreeSet<Relation>,
    pub responses: BTreeSet<Relation>,
    pub includes: BTreeSet<Relation>,
    pub excludes: BTreeSet<Relation>,
    pub marking: Marking,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DcrError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("{0}")]
    Structure(String),
    #[error("duplicate event {0}")]
    DuplicateEvent(String),
    #[error("{kind} relation refers to unknown event {event}")]
    UnknownEvent { kind: &'static str, event: String },
    #[error("unknown relation type {0}")]
    UnknownRelation(String),
    #[error("missing marking section")]
    MissingMarking,
    #[error("marking refers to unknown event {0}")]
    UnknownMarkedEvent(String),
    #[error("no event state for case {case} of model {model}")]
    UnknownCase { model: ModelId, case: u64 },
}

impl DcrModel {
    pub fn new(model_id: ModelId, graph_id: &str, events: &[&str]) -> Self {
        DcrModel {
            model_id,
            version: 1,
            graph_id: graph_id.into(),
            events: events.iter().map(|e| e.to_string()).collect(),
            labels: events.iter().map(|e| (e.to_string(), e.to_string())).collect(),
            conditions: BTreeSet::new(),
            responses: BTreeSet::new(),
            includes: BTreeSet::new(),
            excludes: BTreeSet::new(),
            marking: Marking {
                included: events.iter().map(|e| e.to_string()).collect(),
                ..Marking::default()
            },
        }
    }

    pub fn relations(&self, kind: RelationKind) -> &BTreeSet<Relation> {
        match kind {
            RelationKind::Condition => &self.conditions,
            RelationKind::Response => &self.responses,
            RelationKind::Include => &self.includes,
            RelationKind::Exclude => &self.excludes,
        }
    }

    pub fn relations_mut(&mut self, kind: RelationKind) -> &mut BTreeSet<Relation> {
        match kind {
            RelationKind::Condition => &mut self.conditions,
            RelationKind::Response => &mut self.responses,
            RelationKind::Include => &mut self.includes,
            RelationKind::Exclude => &mut self.excludes,
        }
    }

    pub fn relate(&mut self, kind: RelationKind, source: &str, target: &str) -> &mut Self {
        self.relations_mut(kind)
            .insert((source.to_string(), target.to_string()));
        self
    }

    pub fn has_event(&self, e: &str) -> bool {
        self.events.iter().any(|x| x == e)
    }

    pub fn label<'a>(&'a self, e: &'a str) -> &'a str {
        self.labels.get(e).map(String::as_str).unwrap_or(e)
    }

    /// Targets of `kind` relations leaving `source`.
    pub fn targets(&self, kind: RelationKind, source: &str) -> Vec<&str> {
        self.relations(kind)
            .iter()
            .filter(|(s, _)| s == source)
            .map(|(_, t)| t.as_str())
            .collect()
    }

    /// Sources of conditions on `target`.
    pub fn conditions_of(&self, target: &str) -> Vec<&str> {
        self.conditions
            .iter()
            .filter(|(_, t)| t == target)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<(), DcrError> {
        let mut seen = BTreeSet::new();
        for e in &self.events {
            if !seen.insert(e.as_str()) {
                return Err(DcrError::DuplicateEvent(e.clone()));
            }
        }
        if seen.contains(self.graph_id.as_str()) {
            return Err(DcrError::Structure(format!(
                "graph id {} collides with an event id",
                self.graph_id
            )));
        }
        for kind in RelationKind::ALL {
            for (s, t) in self.relations(kind) {
                for end in [s, t] {
                    if !seen.contains(end.as_str()) {
                        return Err(DcrError::UnknownEvent {
                            kind: kind.as_str(),
                            event: end.clone(),
                        });
                    }
                }
            }
        }
        let m = &self.marking;
        for e in m.executed.iter().chain(&m.pending).chain(&m.included) {
            if !seen.contains(e.as_str()) {
                return Err(DcrError::UnknownMarkedEvent(e.clone()));
            }
        }
        Ok(())
    }
}
