//! Numerical laboratory for the scaled Whittaker 2d growth model.
//!
//! Particles `T[n][k]`, `1 <= k <= n <= N`, diffuse at scale `1/sqrt(gamma)` and
//! are pushed apart exponentially by their neighbours on the level above. As
//! `gamma` grows the repulsion becomes hard reflection and the paths obey a
//! large-deviation principle whose rate functional this crate evaluates,
//! minimizes and checks against Monte Carlo.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod logspace;
pub mod mc;
pub mod model;
pub mod noise;
pub mod rate;
pub mod sde;
pub mod skorokhod;
pub mod varopt;

pub use error::{Error, Result};
