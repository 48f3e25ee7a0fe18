//! Alert triage for rule-based anti-money-laundering systems.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod frame;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod profiles;
pub mod rng;
pub mod synth;
pub mod walker;

pub use error::{Error, Result};
