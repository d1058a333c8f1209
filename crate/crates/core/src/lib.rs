//! Simulation of post-selected optical states: truncated Fock-space states,
//! conditioning on measured photon numbers, Wigner functions and homodyne
//! tomography.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fock;
pub mod postselect;
pub mod tomography;
pub mod wigner;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
