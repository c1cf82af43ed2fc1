//! Uncertainty-weighted knowledge distillation from a frozen teacher into
//! two heterogeneous students that also learn from each other.
//!
//! The crate is self-contained: [`gradcore`] provides tensors and
//! reverse-mode differentiation, [`nets`] the MLP teacher and students,
//! [`distill`] the loss terms, [`optim`] SGD and the cosine schedule,
//! [`data`] a seeded Gaussian-mixture dataset, and [`harness`] the training
//! protocols, metrics, checkpoints, and ablation ladder.

// `!(x >= 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod distill;
pub mod error;
pub mod gradcore;
pub mod harness;
pub mod nets;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
