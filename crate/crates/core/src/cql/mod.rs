//! Streams, keyed tables and triggered rules.

mod engine;
mod rule;
mod value;
pub mod window;

pub use engine::{Cascade, CqlError, Engine, Fault, Mutation, MutationKind, RuleError, Step};
pub use rule::{Action, CaseFilter, Join, KeyConstraint, RuleExpr, RuleIR, Scan, Trigger};
pub use value::{
    event_to_row, payload_value, process_stream_schema, row_to_event, row_to_json, FieldType, Row, SchemaDef,
    SchemaKind, Value, PROCESS_FIELDS,
};
