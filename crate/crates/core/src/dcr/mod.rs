//! DCR graphs compiled to rules over the event-state table.

mod compile;
mod model;
mod parse;
mod query;

pub use compile::{compile_dcr, init_rows, Activation, CLOSED, REJECTED};
pub(crate) use compile::dcr_rules;
pub use model::{DcrError, DcrModel, Marking, Relation, RelationKind};
pub use parse::{parse_dcr, parse_dcr_json, parse_dcr_xml};
pub use query::{accepting, enabled_events, event_states, marking_of, EventFlags};
