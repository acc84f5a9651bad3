//! Dual state-space analysis of brokerage trade tapes.
//!
//! The pipeline runs tape ingestion ([`tape`]), price-bucket panels
//! ([`panel`]), the interday correlation state space ([`state`]), the
//! Fourier dual-space operator regression ([`dual`]), residual
//! backcasting with small neural networks ([`nn`], [`backcast`]) and
//! dynamic liquidity measures ([`liquidity`]). [`synth`] generates seeded
//! multi-trader tapes with planted couplings that the test suites use as
//! ground truth, and [`pdo`] holds the spectral propagator numerics.

// Negated comparisons reject NaN on purpose; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dual;
pub mod error;
pub mod index;
pub mod backcast;
pub mod cli;
pub mod liquidity;
pub mod nn;
pub mod pdo;
pub mod panel;
pub mod provenance;
pub mod state;
pub mod stats;
pub mod synth;
pub mod tape;

pub use error::{Error, Result};
