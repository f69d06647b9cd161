//! Batch commands of the `facepipe` tool.

pub mod commands;
pub mod config;
pub mod items;
