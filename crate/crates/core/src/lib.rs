//! Library for training small neural networks end-to-end or layer-wise and
//! instrumenting them with kernel dependence measures.
//!
//! The crate provides:
//! - dense linear algebra and Gram-matrix dependence estimators ([`linalg`],
//!   [`hsic`]),
//! - a small sequential network engine with auxiliary heads, stop-gradient
//!   boundaries, and forward-mode directional derivatives ([`nn`]),
//! - the local and global loss functions used for layer-wise training
//!   ([`losses`]),
//! - dataset generators, binary loaders, and augmentation ([`data`]),
//! - training loops for backprop, forward-forward, and forward-gradient
//!   modes ([`train`]),
//! - measurement instruments: information-plane recording, linear probes,
//!   variational bounds, and the rank-collapse toy experiment ([`analysis`]).


// Numeric kernels here walk several parallel buffers by index; the
// iterator forms clippy prefers read worse for that pattern.
#![allow(clippy::needless_range_loop)]
pub mod analysis;
pub mod data;
pub mod error;
pub mod hsic;
pub mod label;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::ClassLabel;
pub use tensor::{Real, Tensor, Tensor32, Tensor64};
