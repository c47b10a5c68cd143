//! File formats, run configuration and the `apl` command line.

pub mod cli;
pub mod config;
pub mod formats;
pub mod json;
