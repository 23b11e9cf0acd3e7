//! Experiment pipelines, configuration and report emission for `dimprof`.

pub mod config;
pub mod experiments;
pub mod report;
pub mod sets;
