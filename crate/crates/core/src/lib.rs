//! Adaptive deep joint source-channel coding over a LEO satellite downlink.
//!
//! - [`linkbudget`]: slant range, thermal noise, path loss and SNR.
//! - [`fading`]: Loo statistics, Markov shadowing chain, environment tables.
//! - [`channel`]: the `ẑ = z·h + n` channel and its training layer.
//! - [`nn`]: the small differentiable toolkit the codec is built from.
//! - [`jscc`]: encoder/decoder networks with optional channel attention.
//! - [`harness`]: datasets, training, evaluation sweeps and the mismatch study.

pub mod channel;
pub mod fading;
pub mod harness;
pub mod jscc;
pub mod linkbudget;
pub mod nn;
pub mod rng;
