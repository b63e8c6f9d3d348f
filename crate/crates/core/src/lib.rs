//! Contextual bandits with a first-order (small-loss) regret guarantee.
//!
//! The central policy ([`myga::MygaPolicy`]) runs exponential weights over the
//! real experts plus one auxiliary expert per threshold `s`. Each auxiliary
//! expert advises a truncation of the mixture `q`, and `q` is itself the
//! weighted mixture of all advices, so it is found as a fixed point
//! ([`fixed_point::solve_q`]). The played distribution is the truncation of
//! `q` at the exploration threshold `gamma`.
//!
//! Arms are 0-based everywhere in the library. A pivot `k` is a count: arms
//! `0..k` of the descending-sorted mixture are the majority arms.

// negated float comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod baselines;
pub mod environments;
pub mod error;
pub mod fixed_point;
pub mod myga;
pub mod simplex;
pub mod truncation;

pub use error::{MygaError, Result};
pub use simplex::{ArmPermutation, Distribution};

/// Tolerance shared by simplex validation, solver residuals and the auditor.
pub const TOL: f64 = 1e-9;
