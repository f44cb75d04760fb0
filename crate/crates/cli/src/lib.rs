//! The `sleepnet` command line: prepare, train, evaluate, score and
//! export-attention over a run directory with a fixed layout.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod pairing;

pub use cli::main_with_args;
pub use config::RunConfig;
pub use error::CliError;
