//! Minibatch-prox solvers for stochastic convex optimization, their
//! distributed variants, and a metered lockstep cluster simulator.

pub mod cluster;
pub mod data;
pub mod dist;
mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod prox;
pub mod vector;

pub use error::{Error, Result};
