//! Solver and certifier for two-team games with mean-field coupling on
//! finite spaces.
//!
//! The crate computes symmetric mean-field equilibria by smoothed
//! best-response iteration, evaluates finite-N team games exactly or by
//! Monte Carlo, and certifies how exploitable a mean-field policy is once it
//! is deployed in a game with finitely many decision makers (DMs).

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::large_enum_variant
)]

pub mod cli;
pub mod cost;
pub mod dynamic;
pub mod error;
pub mod finite_n;
pub mod fixed_point;
pub mod fixtures;
pub mod generators;
pub mod mf_static;
pub mod output;
pub mod policy;
pub mod prob;
pub mod rng;
pub mod spec;
pub mod statistic;

pub use error::{Error, Result};
pub use prob::{emp_measure, FiniteSpace, Kernel, ProbVec};
pub use spec::{DynamicGameSpec, GameSpec, StaticGameSpec, ValidationReport};
