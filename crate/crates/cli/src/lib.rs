//! Scenario files, trajectory CSVs, SVG plots and the `fcbf` subcommands.

pub mod commands;
pub mod config;
pub mod csv_log;
pub mod manifest;
pub mod svg;
