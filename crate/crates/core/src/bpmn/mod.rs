//! BPMN models: reading, structural analysis and rule generation.

mod analysis;
mod compile;
mod model;
mod parse;

pub use analysis::{classify_join_inputs, JoinInputClassification, LoopInfo};
pub use compile::{compile_bpmn, compile_bpmn_with, rule_id, CompileOptions, CompiledModel, OrJoinMode};
pub(crate) use compile::{emit_diagnostic, emit_event, on_event};
pub use model::{diff_models, BpmnError, BpmnModel, Edge, ModelDiff, Node, NodeChange, NodeKind};
pub use parse::parse_bpmn;
