//! The `ctbot` command line: model inspection, FK/IK queries, the statics
//! report, workspace studies and the simulator host behind the cockpit.

pub mod cli;
pub mod commands;
pub mod config;
pub mod http;
pub mod parse;
pub mod serve;
