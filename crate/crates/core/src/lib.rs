//! Reachability analysis for neural networks and neural feedback loops by
//! Lipschitz branch-and-bound.
//!
//! The building blocks are [`nn`] (networks and scalar objectives),
//! [`lipschitz`] (certified Lipschitz constants), [`bnb`] (the global
//! minimizer), [`reach`] (open- and closed-loop over-approximation) and
//! [`problems`] (the benchmark definitions and fixtures).

pub mod bnb;
pub mod error;
pub mod exec;
pub mod lipschitz;
pub mod nn;
pub mod problems;
pub mod reach;

pub use error::{Error, Result};
