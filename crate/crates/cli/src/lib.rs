//! Configuration, commands and file formats behind the `kwc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{execute, Command};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
