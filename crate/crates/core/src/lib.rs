//! Unsupervised domain adaptation for battery state-of-health estimation
//! from partial charge curves.
//!
//! A self-attention/distillation extractor ([`sad`]) turns a normalized
//! 160×4 charge segment into a feature map; a small CNN ([`predictor`])
//! maps it to SOH. Training ([`harness::fit`]) minimizes source-domain MSE
//! plus a multi-kernel MMD between source and target features and a
//! smoothness penalty ([`losses`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datapipe;
mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod predictor;
pub mod sad;
pub mod synthgen;

pub use error::{Result, SkdanError};
