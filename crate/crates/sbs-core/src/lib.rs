//! Schrödinger bridge samplers.
//!
//! Iterative proportional fitting on path space, exact for linear-Gaussian
//! models and particle-based otherwise, and the sequential bridge sampler
//! built on top of it. The crate is `no_std` with `alloc`; file formats,
//! configuration and the command line live in the `sbs` crate.
//!
//! Conventions used throughout:
//!
//! - Points are `&[f64]` of length `d`; ensembles are flat row-major
//!   `N x d` buffers.
//! - A policy `psi` is stored through `-log psi(x) = x'Ax + x'b + c`.
//! - Time runs over `0..=T`; kernel `t` maps time `t - 1` to time `t`.
//! - All log-densities are natural logs.

#![no_std]

extern crate alloc;

pub mod connections;
pub mod error;
pub mod exec;
pub mod filters;
pub mod ipf;
pub mod kernels;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod ssb;
pub mod stats;
pub mod targets;

pub use error::Error;
