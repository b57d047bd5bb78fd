//! OFDM channel-estimation workbench.
//!
//! Simulates 3GPP EPA/EVA fading over a 72 x 14 resource grid, computes LS
//! and MMSE estimates from a sparse pilot comb, and trains neural estimators
//! whose input can be augmented with a feature plane extracted by a fully
//! connected autoencoder.

pub mod channel;
pub mod classical;
pub mod dataset;
pub mod enhance;
pub mod error;
pub mod grid;
pub mod link;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod zoo;

pub use error::{Error, Result};
pub use num_complex::Complex64;
