//! Command-line driver: run, eval, ablate and diversity subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod trace;

pub use cli::{main_with_args, Cli};
pub use error::CliError;
