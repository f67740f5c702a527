//! Config-driven collect → train → evaluate pipeline around [`hinf_dpi`].

pub mod artifacts;
pub mod commands;
pub mod config;
mod error;

pub use error::{exit, CliError, Result};
