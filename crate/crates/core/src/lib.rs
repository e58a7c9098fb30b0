//! Relation-biased cross-stock attention with adaptive gated fusion and a
//! temporal Transformer encoder, for cross-sectional stock return ranking.
//!
//! The crate is `no_std` (with `alloc`): it holds the numerical kernels,
//! the model, training, and evaluation metrics. File formats and the
//! command-line driver live in the `griffin` crate.

#![no_std]
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod relations;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
