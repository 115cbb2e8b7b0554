//! Command-line front end: log formats, replay, scenario export and the
//! benchmark harness behind the `nanomap` binary.

pub mod bench;
pub mod commands;
pub mod config;
pub mod logs;
