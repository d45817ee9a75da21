//! Scalar linear impulsive delay differential equations
//!
//! ```text
//! ẋ(t) − Σ_k A_k(t) x[h_k(t)] = r(t),   x(ξ) = φ(ξ) for ξ < 0,
//! x(τ_j) = B_j x(τ_j − 0),
//! ```
//!
//! with tools to simulate them, compute their fundamental functions, check
//! explicit sufficient conditions for (exponential) stability, and design
//! impulse gains `B_j` that stabilize equations which are unstable without
//! impulses.
//!
//! - [`model`]: problem data and validation
//! - [`integrator`]: method-of-steps RK4 solver with Hermite dense output
//! - [`fundamental`]: fundamental functions `X(t,s)`, `C(t,s)`, the
//!   solution representation formula, and exponential envelope fits
//! - [`criteria`]: stability checkers and their certificates
//! - [`synth`]: impulse schedule synthesis
//! - [`verify`]: simulation-based confirmation and falsification sweeps
//!
//! Per-`s` fundamental runs, verification trials and sweep samples run on
//! rayon when the `parallel` feature (default) is enabled.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod error;
pub mod fundamental;
pub mod integrator;
pub mod model;
mod par;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
