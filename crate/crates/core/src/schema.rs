//! Names and schemas of the streams and tables shared by the compilers.

use crate::cql::{process_stream_schema, CqlError, Engine, FieldType, SchemaDef};

pub const PROCESS_EVENT: &str = "Process_Event";
pub const DIAGNOSTICS: &str = "Diagnostics";
pub const EXECUTION_STATE: &str = "Execution_State";
pub const CASE_VARIABLES: &str = "Case_Variables";
pub const WORK_ITEMS: &str = "Work_Items";
pub const EVENT_STATE: &str = "EventState";

pub fn diagnostics_schema() -> SchemaDef {
    SchemaDef::stream(
        DIAGNOSTICS,
        &[
            ("pmID", FieldType::Int),
            ("caseID", FieldType::Int),
            ("nodeID", FieldType::Str),
            ("kind", FieldType::Str),
            ("message", FieldType::Str),
            ("ts", FieldType::Int),
        ],
    )
}

pub fn execution_state_schema() -> SchemaDef {
    SchemaDef::table(
        EXECUTION_STATE,
        &[
            ("pmID", FieldType::Int),
            ("caseID", FieldType::Int),
            ("nodeID", FieldType::Str),
            ("state", FieldType::Str),
            ("ts", FieldType::Int),
            ("seq", FieldType::Int),
        ],
        &["pmID", "caseID", "nodeID"],
    )
}

pub fn case_variables_schema() -> SchemaDef {
    SchemaDef::table(
        CASE_VARIABLES,
        &[
            ("pmID", FieldType::Int),
            ("caseID", FieldType::Int),
            ("variables", FieldType::Map),
        ],
        &["pmID", "caseID"],
    )
}

pub fn work_items_schema() -> SchemaDef {
    SchemaDef::table(
        WORK_ITEMS,
        &[
            ("pmID", FieldType::Int),
            ("caseID", FieldType::Int),
            ("nodeID", FieldType::Str),
            ("ts", FieldType::Int),
        ],
        &["pmID", "caseID", "nodeID"],
    )
}

pub fn event_state_schema() -> SchemaDef {
    SchemaDef::table(
        EVENT_STATE,
        &[
            ("pmID", FieldType::Int),
            ("caseID", FieldType::Int),
            ("eventID", FieldType::Str),
            ("happened", FieldType::Bool),
            ("included", FieldType::Bool),
            ("restless", FieldType::Bool),
            ("ts", FieldType::Int),
        ],
        &["pmID", "caseID", "eventID"],
    )
}

/// Registers every stream and table the compiled rules refer to.
pub fn install(engine: &mut Engine) -> Result<(), CqlError> {
    engine.ensure_schema(process_stream_schema(PROCESS_EVENT))?;
    engine.ensure_schema(diagnostics_schema())?;
    engine.ensure_schema(execution_state_schema())?;
    engine.ensure_schema(case_variables_schema())?;
    engine.ensure_schema(work_items_schema())?;
    engine.ensure_schema(event_state_schema())?;
    Ok(())
}
