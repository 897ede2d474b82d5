//! File formats, experiment configuration and command implementations for
//! the `pfdiff` tool, on top of the `pfdiff-core` numerics.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod manifest;

pub use error::{CliError, Result};
