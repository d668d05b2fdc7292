//! Command-line orchestration of the i-vector mapping pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
