//! Interpretable skeleton-motion captioning.
//!
//! The crate is `no_std` (it needs `alloc`). It contains everything that is
//! pure computation: a small reverse-mode autodiff engine, the part-based
//! motion encoder, spatio-temporal attention with a Gaussian temporal window,
//! the adaptive gate, the two-LSTM decoder, guidance losses, training, caption
//! metrics, a synthetic motion corpus and the interpretability analytics.
//! File formats, checkpoints and the command line live in the `motioncap`
//! crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod interp;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod skeleton;
pub mod supervision;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
