//! Power-flow physics, a from-scratch denoising diffusion model, and a
//! constrained DDIM sampler for synthesizing feasible AC operating states.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and the
//! command line live in the `pfdiff` companion crate.
//!
//! Layout of a state vector for an `n`-bus grid is `[P | Q | V | θ]`, length
//! `4n`, all per-unit with angles in radians.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod casefile;
pub mod datagen;
pub mod diffusion;
mod error;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod powerflow;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use grid::{AdmittanceMatrix, BranchSpec, BusSpec, BusType, GenSpec, GridCase};
pub use powerflow::{LimitSet, PfSolution, Projection, ResidualReport, StateVector};
