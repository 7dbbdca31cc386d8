//! Event-driven enactment of BPMN, DCR and hybrid process models on top of a
//! small continuous-query engine over streams and keyed tables.

pub mod event;
pub mod expr;
pub mod cql;
pub mod schema;
pub mod bpmn;
pub mod dcr;
pub mod hybrid;
pub mod log;
pub mod oracles;
pub mod runtime;
