//! Vertical federated learning simulator with few-shot label unlearning.
//!
//! A federation is `K` passive parties, each owning a vertical feature shard
//! and a bottom model, plus one active party that owns the labels and the top
//! model. Parties only exchange forward embeddings and backward gradients.
//!
//! The crate provides:
//! - [`numcore`]: dense tensors, MLPs with manual backprop, soft-target
//!   cross-entropy and an SGD optimizer that can ascend as well as descend.
//! - [`protocol`]: party state machines, ID alignment and the training loop.
//! - [`unlearn`]: manifold mixup over forward embeddings followed by gradient
//!   ascent on both sides of the split, plus retrain / fine-tune / amnesiac /
//!   plain gradient ascent baselines.
//! - [`attacks`]: gradient-clustering label leakage, membership inference and
//!   passive model completion.
//! - [`privacy`]: Gaussian perturbation and top-k compression of the
//!   gradients sent to passive parties.
//! - [`data`]: IDX parsing, synthetic blobs, vertical partitioning,
//!   checkpoints and gradient trace files.
//! - [`harness`]: config parsing and the experiment runner behind the `vfu`
//!   binary.

pub mod attacks;
pub mod data;
mod error;
pub mod harness;
pub mod numcore;
pub mod parallel;
pub mod privacy;
pub mod protocol;
pub mod unlearn;

pub use error::{Error, Result};
