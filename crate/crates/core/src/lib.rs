// Negated float comparisons are deliberate: NaN residuals must fail checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod factorization;
pub mod fiber_map;
pub mod bundle;
pub mod constructions;
pub mod group;
pub mod ode;
pub mod connection;
pub mod parallel;
pub mod path;
pub mod transport;

pub use error::{Error, Result};
