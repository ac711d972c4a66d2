//! Configuration-driven runner for the exact-score diffusion experiments.
//!
//! A run resolves an [`config::ExperimentConfig`], executes pipeline stages
//! that exchange files through one output directory, and records every
//! output's SHA-256 together with the config and stage seeds in a
//! [`manifest::Manifest`], from which the run can be reproduced bit for bit.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod pipeline;

pub use config::{validate_config, ExperimentConfig, ExperimentId, Stage};
pub use manifest::Manifest;
pub use pipeline::Pipeline;
