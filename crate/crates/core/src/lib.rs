//! Topological invariants of time-reversal-invariant band structures on
//! sphere and torus phase spaces.

pub mod bands;
pub mod cli;
pub mod error;
pub mod gauge;
pub mod invariants;
pub mod models;
pub mod numkit;
pub mod phasespace;

pub use error::{Error, Result};
