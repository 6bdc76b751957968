//! File formats, experiment configuration and drivers around `sbs-core`.

pub mod config;
pub mod experiments;
pub mod error;
pub mod heart;
pub mod output;
pub mod policy_io;

pub use error::{Error, Result};
