//! Traces, exact oracles and experiment drivers.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod success;
pub mod trace;
pub mod workload;
