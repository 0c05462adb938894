//! Deterministic simulation of modular federated learning: networks are cut
//! into a configuration module, federated among clients of the same device
//! generation, and an operation module, federated among clients with similar
//! usage. FedAvg and FedPer are provided as baselines over the same client
//! training path.

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod registry;
pub mod rng;

pub use error::{Error, Result};
