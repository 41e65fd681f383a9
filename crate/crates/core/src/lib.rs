//! Fully unsupervised anomaly detection on precomputed patch features.
//!
//! A small scoring network is trained from contaminated, unlabeled data by
//! pseudo-labeling every patch against a memory bank of adapted features
//! from the images it currently scores most normal. The bank is rebuilt at
//! every iteration, mutually closest patch pairs are pushed towards equal
//! scores, and ambiguous patches are perturbed with batch-variance noise.

pub mod error;
pub mod eval;
pub mod experiments;
pub mod feature_store;
pub mod inference;
pub mod localnet;
pub mod neighbors;
pub mod pseudo_label;
pub mod rng;
pub mod stats;
pub mod train;

pub use error::{FunadError, Result};
