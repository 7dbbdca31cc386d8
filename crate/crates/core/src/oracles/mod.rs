//! Reference semantics for differential testing: a token game for BPMN and
//! the DCR transition function, plus seeded model generators.

mod dcr;
mod drive;
mod gen;
mod token;

pub use dcr::{dcr_accepting, dcr_enabled, dcr_enabled_set, dcr_step, DcrMarking, DcrStepError};
pub use drive::{diff_traces, run_bpmn, run_dcr, BpmnRun, BpmnStep, DcrRun, DcrStep, DriveError, TraceDiff, LOOP_BUDGET};
pub use gen::{choose, random_bpmn, random_dcr, render_bpmn, Block, Choice, Gate, GeneratedBpmn, MAX_BODY};
pub use token::{Fired, TokenError, TokenGame, TokenMarking};
