//! Typed epidemics on weighted random graphs: who infects whom.
//!
//! Infection spreads along a directed graph whose edge weights are contact
//! ages, so infection times are shortest-path distances from the initial
//! infecteds and each infection is attributed to its predecessor on the
//! shortest path. The crate simulates this forward, explores susceptibility
//! sets backward, approximates both by a backward branching process, and
//! evaluates the closed-form bounds available for two-type marked models.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod backward;
pub mod branching;
pub mod error;
pub mod forward;
pub mod graph;
pub mod linalg;
pub mod model;
mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
