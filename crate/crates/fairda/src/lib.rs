//! Fairness-aware unsupervised domain adaptation at desk scale.
//!
//! A labeled source domain trains a classifier for an unlabeled target
//! domain whose distribution differs. Plain adaptation objectives tend to
//! serve some categories far worse than others; this crate implements a
//! virtual-label-distribution scheme that counteracts the disparity:
//!
//! * [`pseudo`] tracks the class distribution of target pseudo-labels
//!   across epochs,
//! * [`fairloss`] turns it into per-class weights and provides the
//!   re-weighted cross-entropy and KL re-balancing losses,
//! * [`alignment`] supplies a pluggable feature-moment alignment term,
//! * [`nn`] and [`tensor`] are the minimal dense `f64` classifier those
//!   losses drive,
//! * [`metrics`] measures the result, including worst-N accuracy,
//! * [`data`] generates synthetic two-domain tasks with label and
//!   covariate shift, and
//! * [`harness`] ties everything into reproducible training and ablation
//!   runs.
//!
//! Every run is deterministic given its config: one ChaCha8 key drives
//! model init and both batch streams, and all heavy math is plain
//! single-threaded `f64`.

pub mod alignment;
pub mod data;
pub mod error;
pub mod fairloss;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pseudo;
pub mod tensor;

pub use error::{Error, Result};
