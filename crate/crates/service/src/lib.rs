//! HTTP API, server-sent event feed and command-line front end over the
//! flowcq runtime.

pub mod api;
pub mod cli;
