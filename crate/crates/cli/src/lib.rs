//! File formats, configuration and subcommands of the `emccd-pnr` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod reproduce;
