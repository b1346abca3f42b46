//! Design and simulation of pulsed type-II parametric down-conversion sources
//! in dispersion-engineered KTP waveguides.
//!
//! The pipeline runs from calibrated dispersion ([`dispersion`]) through pump
//! and filter spectra ([`spectra`]) to the joint spectral amplitude ([`jsa`]),
//! its Schmidt analysis ([`analysis`]) and a model of the detection chain
//! ([`measurement`]). The `biphoton` binary in [`cli`] wraps these as batch
//! commands.

pub mod analysis;
pub mod cli;
pub mod dispersion;
pub mod error;
pub mod export;
pub mod jsa;
pub mod measurement;
pub mod spectra;
pub mod units;

pub use error::{Error, Result};
