//! Truncated polynomial expansion (TPE) precoding for massive-MIMO downlink.
//!
//! The crate covers channel generation with imperfect CSI, RZF and TPE
//! precoders, large-system deterministic equivalents of their SINRs,
//! optimization of the TPE coefficients, Monte Carlo evaluation and an
//! operation-count complexity model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod complexity;
pub mod config;
pub mod error;
pub mod experiments;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod precoders;
pub mod rmt;

pub use error::{Result, TpeError};
