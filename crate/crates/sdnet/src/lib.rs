//! File formats, checkpoints and the `sdnet` command line around
//! [`sdnet_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod contextual;
pub mod coqa;
pub mod error;
pub mod report;
pub mod runlog;
pub mod vectors;

pub use error::{CliError, CliResult};
