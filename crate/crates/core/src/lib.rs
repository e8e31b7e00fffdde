//! Solvers for selling a large block of a single asset over a fixed number of
//! steps when every sale permanently depresses later prices.
//!
//! The crate provides the instance model and penalty calibration, a GBM price
//! generator, the exact dynamic program with coarse and funnel variants,
//! local-search heuristics, analytic upper bounds and a benchmark harness.

pub mod bench;
pub mod bounds;
pub mod dp;
pub mod error;
pub mod local_search;
pub mod model;
pub mod prices;

pub use error::{Error, Result};
pub use model::{Instance, InstanceSpec, Penalty, Prototype, Schedule};
