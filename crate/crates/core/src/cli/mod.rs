//! Experiment driver: configs, training loops and the command implementations.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod suite;
pub mod train;
