//! Command-line front end for `funfx-core`: long-format CSV ingestion, a
//! TOML run configuration, and the `fit`, `bands`, `test` and `simulate`
//! commands writing JSON and CSV artifacts.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod runner;

pub use commands::run;
pub use config::{Command, RunConfig};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, read_long, write_long};
