//! Semantic-edge unsupervised domain adaptation for semantic segmentation.
//!
//! This crate holds everything that is pure computation: the synthetic
//! two-domain scene generator, a small reverse-mode autograd over CHW
//! tensors, the four networks (semantic stream, gated edge stream and the
//! two discriminators), every training objective with its analytic
//! gradient, the optimizers and the single-iteration training steps, plus
//! the evaluation metrics. File formats, run directories and the command
//! line live in the `seda` companion crate.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. The `std` feature only enables runtime SIMD detection in the
//! matrix-multiply kernel.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adist;
pub mod error;
pub mod graph;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
