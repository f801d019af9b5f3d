//! Gradient field models on triadic cubes of Z^d: exact Gaussian oracles,
//! Monte Carlo estimation of surface tensions, and numerical checks of the
//! functional inequalities around them.

pub mod cli;
pub mod config;
pub mod ensembles;
pub mod error;
pub mod free_energy;
pub mod gff;
pub mod homog;
pub mod lattice;
pub mod linalg;
pub mod numeric;
pub mod output;
pub mod potentials;
pub mod sampler;
pub mod verification;

pub use error::{Error, Result};
