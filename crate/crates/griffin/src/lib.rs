//! File formats, checkpoints, run configuration and the command-line
//! driver around [`griffin_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod io;
pub mod report;

pub use cli::{dispatch, run, Cli, Command};
pub use config::{parse_config, RunConfig};
