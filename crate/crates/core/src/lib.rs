//! Scaling laws for routed language models, together with the routing
//! kernels they are measured on.
//!
//! The crate is `no_std` (it needs `alloc`) and holds only pure computation:
//!
//! - [`law`]: evaluation of the dense, separable, bilinear and saturated laws,
//!   effective parameter count, cutoff analysis and level curves.
//! - [`arch`]: parameter and FLOP accounting for a transformer shape.
//! - [`fit`]: bounded multi-start fitting of every law family and RMSLE scoring.
//! - [`routing`]: top-k gating, Sinkhorn balanced assignment, hash routing,
//!   balancing loss, nucleus filtering and REINFORCE loss terms.
//! - [`dispatch`]: worker shuffling, expert capacity and token dropping.
//! - [`toy`]: a tabular router trained with policy gradients.
//!
//! Scaling-law logarithms are base 10 everywhere. Policy and entropy terms use
//! the natural logarithm. The two never mix.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod arch;
pub mod dispatch;
mod error;
pub mod fit;
pub mod law;
mod math;
pub mod matrix;
pub mod routing;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
pub use matrix::Matrix;
