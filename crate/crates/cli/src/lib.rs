//! Command-line front end of the `qread` simulator: configuration handling, the
//! experiment drivers behind each subcommand, and result files.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Command, Run};
pub use config::{Overrides, RunConfig};
