//! Split-model federated learning with flow-matching probe verification.
//!
//! Clients keep a private feature extractor and share a classifier plus a
//! conditional flow-matching generator over extractor features. The server
//! uses the aggregated generator to synthesise labelled feature probes,
//! scores every uploaded classifier on them, drops outliers with a Hampel
//! rule and a relative-accuracy floor, and aggregates the rest with
//! accuracy weights. Sign-flip, inner-product-manipulation and fake-client
//! base-model attacks, plus FedAvg / median / trimmed-mean / geometric-median
//! baselines, are included for comparison.

pub mod attacks;
pub mod baselines;
pub mod client;
pub mod data;
pub mod error;
pub mod flow;
pub mod harness;
pub mod model;
pub mod nn;
pub mod rng;
pub mod server;
pub mod stats;

pub use error::{FedFgError, IdxError, Result};
pub use harness::{preset, run, RoundRecord, RunConfig, RunOutput};
