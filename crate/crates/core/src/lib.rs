//! Trade network simulator: dynamics, critical relations, tail statistics,
//! network geometry and banking scenarios.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banking;
pub mod config;
pub mod criticality;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod tail;
