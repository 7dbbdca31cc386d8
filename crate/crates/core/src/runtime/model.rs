use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpmn::{compile_bpmn_with, parse_bpmn, BpmnModel, CompileOptions, CompiledModel, NodeKind};
use crate::dcr::{compile_dcr, parse_dcr, DcrModel};
use crate::event::ModelId;
use crate::hybrid::{compile_hybrid, HybridBinding, HybridModel};

use super::RuntimeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bpmn,
    Dcr,
    Hybrid,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Bpmn => "bpmn",
            ModelKind::Dcr => "dcr",
            ModelKind::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingSpec {
    pub host: String,
    /// DCR source text.
    pub source: String,
    pub terminators: Vec<String>,
}

/// Model sources as submitted for deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Bpmn {
        source: String,
    },
    Dcr {
        source: String,
    },
    Hybrid {
        source: String,
        bindings: Vec<BindingSpec>,
    },
}

#[derive(Deserialize)]
struct Manifest {
    bpmn: String,
    #[serde(default, rename = "binding")]
    bindings: Vec<ManifestBinding>,
}

#[derive(Deserialize)]
struct ManifestBinding {
    host: String,
    dcr: String,
    terminators: Vec<String>,
}

fn read(path: &Path) -> Result<String, RuntimeError> {
    std::fs::read_to_string(path).map_err(|e| RuntimeError::Io(format!("{}: {e}", path.display())))
}

impl ModelSpec {
    /// Picks the kind from the file name: `.bpmn`, `.toml` (hybrid manifest),
    /// anything else is read as a DCR graph.
    pub fn from_path(path: &Path) -> Result<Self, RuntimeError> {
        let name = path.to_string_lossy();
        if name.ends_with(".bpmn") || name.ends_with(".bpmn.xml") {
            return Ok(ModelSpec::Bpmn { source: read(path)? });
        }
        if name.ends_with(".toml") {
            let m: Manifest = toml::from_str(&read(path)?)
                .map_err(|e| RuntimeError::Malformed(format!("manifest: {e}")))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let mut bindings = Vec::new();
            for b in m.bindings {
                bindings.push(BindingSpec {
                    host: b.host,
                    source: read(&dir.join(&b.dcr))?,
                    terminators: b.terminators,
                });
            }
            return Ok(ModelSpec::Hybrid {
                source: read(&dir.join(&m.bpmn))?,
                bindings,
            });
        }
        Ok(ModelSpec::Dcr { source: read(path)? })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Bpmn { .. } => ModelKind::Bpmn,
            ModelSpec::Dcr { .. } => ModelKind::Dcr,
            ModelSpec::Hybrid { .. } => ModelKind::Hybrid,
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).unwrap_or_default());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(&self) -> Result<LoadedModel, RuntimeError> {
        Ok(match self {
            ModelSpec::Bpmn { source } => LoadedModel::Bpmn(parse_bpmn(source.as_bytes())?),
            ModelSpec::Dcr { source } => LoadedModel::Dcr(parse_dcr(source.as_bytes())?),
            ModelSpec::Hybrid { source, bindings } => {
                let mut h = HybridModel {
                    top: parse_bpmn(source.as_bytes())?,
                    bindings: Vec::new(),
                };
                for b in bindings {
                    h.bindings.push(HybridBinding {
                        host: b.host.clone(),
                        inner: parse_dcr(b.source.as_bytes())?,
                        terminators: b.terminators.iter().cloned().collect(),
                    });
                }
                h.validate()?;
                LoadedModel::Hybrid(h)
            }
        })
    }
}

/// What a submitted node is to the runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeRole {
    /// BPMN task or intermediate event completed by an agent.
    Task,
    /// Start, end, gateway and sub-process nodes.
    EngineDriven,
    /// An event of a standalone graph.
    DcrEvent,
    /// An event of the graph hosted by `host`.
    Inner { host: String },
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Bpmn(BpmnModel),
    Dcr(DcrModel),
    Hybrid(HybridModel),
}

impl LoadedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            LoadedModel::Bpmn(_) => ModelKind::Bpmn,
            LoadedModel::Dcr(_) => ModelKind::Dcr,
            LoadedModel::Hybrid(_) => ModelKind::Hybrid,
        }
    }

    pub fn model_id(&self) -> ModelId {
        match self {
            LoadedModel::Bpmn(m) => m.model_id,
            LoadedModel::Dcr(m) => m.model_id,
            LoadedModel::Hybrid(h) => h.top.model_id,
        }
    }

    pub fn version(&self) -> u32 {
        match self {
            LoadedModel::Bpmn(m) => m.version,
            LoadedModel::Dcr(m) => m.version,
            LoadedModel::Hybrid(h) => h.top.version,
        }
    }

    pub fn bpmn(&self) -> Option<&BpmnModel> {
        match self {
            LoadedModel::Bpmn(m) => Some(m),
            LoadedModel::Hybrid(h) => Some(&h.top),
            LoadedModel::Dcr(_) => None,
        }
    }

    pub fn dcr(&self) -> Option<&DcrModel> {
        match self {
            LoadedModel::Dcr(m) => Some(m),
            _ => None,
        }
    }

    pub fn compile(&self, opts: CompileOptions) -> Result<CompiledModel, RuntimeError> {
        Ok(match self {
            LoadedModel::Bpmn(m) => compile_bpmn_with(m, opts)?,
            LoadedModel::Dcr(m) => compile_dcr(m)?,
            LoadedModel::Hybrid(h) => compile_hybrid(h)?,
        })
    }

    /// The node whose started event opens a case.
    pub fn entry(&self) -> &str {
        match self {
            LoadedModel::Dcr(m) => &m.graph_id,
            _ => self.bpmn().and_then(|m| m.start_events().first().copied()).unwrap_or(""),
        }
    }

    pub fn is_end(&self, node: &str) -> bool {
        self.bpmn()
            .is_some_and(|m| m.kind(node) == Some(NodeKind::EndEvent))
    }

    pub fn role(&self, node: &str) -> NodeRole {
        match self {
            LoadedModel::Dcr(m) if m.has_event(node) => NodeRole::DcrEvent,
            LoadedModel::Dcr(_) => NodeRole::Unknown,
            LoadedModel::Hybrid(h) if h.binding_of_event(node).is_some() => NodeRole::Inner {
                host: h.binding_of_event(node).map(|b| b.host.clone()).unwrap_or_default(),
            },
            _ => match self.bpmn().and_then(|m| m.kind(node)) {
                Some(k) if k.is_agent_driven() => NodeRole::Task,
                Some(_) => NodeRole::EngineDriven,
                None => NodeRole::Unknown,
            },
        }
    }

    /// Whether a logged event was submitted from outside rather than derived
    /// by the rules.
    pub fn is_external(&self, node: &str, state: crate::event::LifecycleState) -> bool {
        use crate::event::LifecycleState::*;
        match (state, self.role(node)) {
            (Started, _) => node == self.entry(),
            (Completed, NodeRole::Task | NodeRole::DcrEvent | NodeRole::Inner { .. }) => true,
            _ => false,
        }
    }
}
