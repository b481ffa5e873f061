//! Experiment orchestration, metrics, persistence and tree export.

pub mod experiment;
pub mod export;
pub mod metrics;
pub mod trace;
