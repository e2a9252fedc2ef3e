//! Datasets, training loop, experiments and command line for OvSW binary networks.

pub mod cli;
pub mod config;
pub mod data;
pub mod experiments;
pub mod train;
