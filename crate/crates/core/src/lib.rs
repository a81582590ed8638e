//! Hallucination-subspace extraction and selective null-space weight editing.
//!
//! The pipeline works per layer on contrastive feature pairs:
//!
//! 1. [`extract`]: mean-pool token features, fit the faithful subspace from
//!    the top right singular vectors of `X⁺`, and take the part of `X⁻`
//!    orthogonal to it as the hallucination component `X̃`.
//! 2. [`edit`]: score weight rows by mean cosine with the rows of `X̃`, keep
//!    the top K, and replace each with its projection onto the null space of
//!    `X̃`.
//!
//! [`synth`] and [`harness`] provide planted synthetic data for checking the
//! estimator and the edit against ground truth; [`matio`] handles files and
//! [`cli`] the `mpd` binary.

pub mod cli;
pub mod edit;
pub mod error;
pub mod extract;
pub mod harness;
pub mod linalg;
pub mod matio;
pub mod synth;

pub use error::{Error, Result};
