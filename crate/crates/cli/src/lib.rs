//! Experiment driver for the `rgpe` binary: configuration, state files,
//! output tables and the solve / compare / spectrum / rates / check
//! pipelines.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod statefile;
