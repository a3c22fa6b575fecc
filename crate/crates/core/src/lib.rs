//! Laboratory for point-wise reranking objectives.
//!
//! Two classic training objectives for point-wise rerankers — contrastive
//! InfoNCE over an example's candidate pool and per-pair yes/no token
//! classification — share a common gradient structure: each document
//! contributes a scalar *weight* (update magnitude) times a *direction*
//! vector (token-embedding row or row difference). This crate implements
//! both losses, their closed-form per-document gradients, and a unified
//! loss that combines any weight scheme with any direction scheme under
//! stop-gradient weights, so the two components can be probed
//! independently.
//!
//! Everything runs at desk scale on synthetic retrieval corpora with a
//! tiny differentiable encoder standing in for the scoring backbone.
//! Closed-form gradients are validated against central finite
//! differences, ranking metrics against permutation brute force, and the
//! half-precision weight-underflow failure mode is reproduced with an
//! explicit IEEE binary16 rounding emulation.
//!
//! Modules:
//!
//! - [`numerics`] — stable softmax/log-sum-exp, binary16 rounding, seeded RNG
//! - [`scorer`] — toy encoder + token projection head with manual backprop
//! - [`objectives`] — losses, weight/direction schemes, closed-form gradients
//! - [`data`] — synthetic corpus generation, negative mining, JSONL I/O
//! - [`trainer`] — deterministic mini-batch training loop and gradcheck
//! - [`evalrank`] — reranking plus NDCG@k / Recall@k with brute-force oracles

pub mod data;
pub mod evalrank;
pub mod numerics;
pub mod objectives;
pub mod scorer;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input (empty vector, non-finite entry, bad label, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shape disagreement between parameters and data.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A configuration value outside its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A line of a JSONL file failed to parse.
    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },

    /// Training observed a non-finite loss and aborted.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
