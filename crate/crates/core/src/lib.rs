//! Minimum-power operating points for cell-free massive MIMO downlinks.
//!
//! The crate picks which access points stay on and how much power each
//! one spends on each user, subject to per-user spectral-efficiency
//! targets. It contains:
//!
//! - [`network`]: random drops, wrap-around geometry, correlated shadowing,
//!   pilot assignment and MMSE estimation variances;
//! - [`performance`]: the closed-form SINR/SE and the power consumption model;
//! - [`socp`]: second-order cone programs and their solution;
//! - [`formulation`]: every optimization problem expressed as a [`socp::SocProgram`];
//! - [`bnb`]: the exact mixed-integer method and the exhaustive oracle;
//! - [`heuristics`]: the sparsity-based and transmit-power-based turn-off
//!   algorithms and the disjoint baseline;
//! - [`harness`]: the Monte Carlo driver behind the `cellfree` binary.

pub mod bnb;
pub mod error;
pub mod formulation;
pub mod harness;
pub mod heuristics;
pub mod network;
pub mod performance;
pub mod scenario;
pub mod socp;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
