//! Deterministic federated-learning simulation.
//!
//! Clients train small MLPs on private, non-i.i.d. shards; the server merges
//! them with one of several strategies: data-size-weighted averaging
//! (FedAvg), averaging with server momentum (FedAvgM), ensemble distillation
//! (v-Distillation), or distillation of a Bayesian model ensemble sampled
//! from a fitted global-model posterior with stochastic weight averaging
//! (FedBE). Every random draw comes from a stream keyed by logical indices,
//! so a run is a pure function of its configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod posterior;
pub mod rng;
mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{Activation, MlpArch, MlpModel, ParamVector, SgdConfig};
pub use rng::RngStream;
pub use train::batches_per_epoch;
