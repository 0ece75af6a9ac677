//! Command-line front end for the session-parse pipeline.

pub mod commands;
pub mod config;
