//! Weak transition manifolds for reaction-coordinate discovery in
//! overdamped Langevin dynamics.

pub mod chain;
pub mod config;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod manifold;
pub mod pipeline;
pub mod potential;
pub mod rc;
pub mod rng;
pub mod ulam;

pub use error::{Error, Result};
