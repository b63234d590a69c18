//! Command-line front end: argument parsing, experiment commands and the
//! file formats they write.

pub mod args;
pub mod bench;
pub mod commands;
pub mod output;

pub use args::Cli;
pub use commands::{error_exit_code, run, Outcome};
