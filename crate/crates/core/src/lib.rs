//! Federated averaging with per-parameter mixed-precision quantization of
//! client updates.
//!
//! * [`quantizer`]: stochastic uniform quantization at fixed or per-element
//!   bit-widths, variance bounds and Monte-Carlo estimators.
//! * [`cgsa`]: bit allocation under a total budget by simulated annealing,
//!   with exact oracles.
//! * [`codec`]: the byte format of quantized updates.
//! * [`mlkit`]: small models, synthetic data, client partitions.
//! * [`flsim`]: the FedAvg loop.
//! * [`config`], [`report`], [`cli`]: experiment files, metrics CSVs and the
//!   `fedfq` command.

pub mod cgsa;
pub mod cli;
pub mod codec;
pub mod config;
pub mod error;
pub mod flsim;
pub mod mlkit;
pub mod quantizer;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use quantizer::{BitAllocation, DenseVector, QuantizedUpdate, Scheme};
