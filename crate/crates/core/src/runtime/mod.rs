//! Case lifecycle, deployment and migration on top of the rule engine.

mod config;
mod migrate;
mod model;
mod orchestrator;
mod sharded;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::BpmnError;
use crate::cql::{CqlError, Fault};
use crate::dcr::DcrError;
use crate::event::{CaseId, ModelId, RawExecutionEvent, Timestamp};
use crate::hybrid::HybridError;

pub use config::{Config, ConfigError};
pub use migrate::{plan_migration, MigrationPlan, MigrationPolicy};
pub use model::{BindingSpec, LoadedModel, ModelKind, ModelSpec, NodeRole};
pub use orchestrator::Orchestrator;
pub use sharded::{ReplayReport, Runtime, CASE_STATUS_STREAM};
pub use crate::log::{ControlOp, ControlRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Running,
    Completed,
    Faulted,
}

impl CaseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseStatus::Running => "running",
            CaseStatus::Completed => "completed",
            CaseStatus::Faulted => "faulted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub model: ModelId,
    pub version: u32,
    pub case: CaseId,
    pub status: CaseStatus,
    pub created: Timestamp,
    pub closed: Option<Timestamp>,
    pub last_ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployedModel {
    pub model: ModelId,
    pub version: u32,
    pub kind: ModelKind,
    pub rule_ids: Vec<String>,
    pub digest: String,
    pub deployed_at: Timestamp,
}

/// Something an agent can do next in a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub node: String,
    pub kind: WorkKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkKind {
    Task,
    Event,
}

/// A record pushed to subscribers, tagged by stream name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Notification {
    pub stream: String,
    pub record: serde_json::Value,
}

/// Result of an accepted submission.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub case: CaseId,
    /// Process events in cascade order, the submission first.
    pub events: Vec<RawExecutionEvent>,
    pub diagnostics: Vec<serde_json::Value>,
    pub status: CaseStatus,
    /// Rows removed by the end-of-case purge.
    pub purged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Malformed,
    NotFound,
    Conflict,
    Fault,
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Bpmn(#[from] BpmnError),
    #[error(transparent)]
    Dcr(#[from] DcrError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Io(String),
    #[error("unknown model {0}")]
    UnknownModel(ModelId),
    #[error("unknown case {0}")]
    UnknownCase(CaseId),
    #[error("node {node} is not part of model {model}")]
    UnknownNode { model: ModelId, node: String },
    #[error("model {model} version {version} is already deployed")]
    VersionConflict { model: ModelId, version: u32 },
    #[error("case {case}: timestamp {got} is not after {last}")]
    StaleTimestamp {
        case: CaseId,
        last: Timestamp,
        got: Timestamp,
    },
    #[error("case {case} is {}", status.as_str())]
    CaseNotRunning { case: CaseId, status: CaseStatus },
    #[error("case {case} belongs to model {expected}, not {got}")]
    ModelMismatch {
        case: CaseId,
        expected: ModelId,
        got: ModelId,
    },
    #[error("{0}")]
    InvalidSubmission(String),
    #[error("{node} is driven by the engine and cannot be submitted")]
    EngineDriven { node: String },
    #[error("{node} has no open work item in case {case}")]
    NotOffered { case: CaseId, node: String },
    #[error("{node} rejected: {message}")]
    Rejected {
        node: String,
        kind: String,
        message: String,
    },
    #[error("{0}")]
    Unsupported(String),
    #[error("deployment failed: {0}")]
    Deploy(#[from] CqlError),
    #[error(transparent)]
    Fault(#[from] Fault),
}

impl RuntimeError {
    pub fn class(&self) -> ErrorClass {
        use RuntimeError::*;
        match self {
            Bpmn(_) | Dcr(_) | Hybrid(_) | Malformed(_) | InvalidSubmission(_)
            | EngineDriven { .. } | ModelMismatch { .. } | Unsupported(_) | Deploy(_) => {
                ErrorClass::Malformed
            }
            UnknownModel(_) | UnknownCase(_) | UnknownNode { .. } => ErrorClass::NotFound,
            VersionConflict { .. } | StaleTimestamp { .. } | CaseNotRunning { .. }
            | NotOffered { .. } | Rejected { .. } => ErrorClass::Conflict,
            Fault(_) | Io(_) => ErrorClass::Fault,
        }
    }
}
