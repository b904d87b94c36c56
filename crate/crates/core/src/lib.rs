//! Hierarchical equations of motion (HEOM) for open quantum systems with
//! general system–bath coupling, plus a stochastic-decoupling trajectory
//! simulator used as an independent cross-check.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bath;
pub mod error;
pub mod hierarchy;
pub mod integrator;
pub mod operators;
pub mod oracles;
pub mod stochastic;
pub mod validation;

pub use error::{Error, Result};
