//! Training loop, experiment drivers and configuration for the `sgcrf` CLI.

pub mod config;
pub mod data;
pub mod train;
pub mod experiments;
pub mod output;
pub mod inspect;
