//! Config-driven experiments on networked SIS epidemics under collaborative
//! barrier-based safety filtering.
//!
//! Each command reads an [`config::ExperimentConfig`], writes CSV and
//! optional SVG files into an output directory, and records a
//! `manifest.json` with hashes of the config and every output file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod manifest;
pub mod reproduce;
pub mod svg;

use std::fmt;

use config::ConfigErrors;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigErrors),
    Io(String),
    Runtime(String),
    /// Reproduction ran but its summary did not meet the expectations.
    Mismatch(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Runtime(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error:\n{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e}"),
            CliError::Mismatch(lines) => write!(f, "reproduction mismatch:\n{}", lines.join("\n")),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ccbfnet_core::Error> for CliError {
    fn from(e: ccbfnet_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
