//! Std companion of `ensvote-core`: Python parsing, runner processes,
//! differential execution, candidate acquisition, reports and the CLI.

pub mod acquire;
pub mod cli;
pub mod config;
pub mod diff;
pub mod harness;
pub mod pipeline;
pub mod runner;
pub mod syntax;
