//! Simulation and analysis of quantum-enhanced readout of binary optical patterns.
//!
//! * [`photonstats`]: photon-count laws of coherent and twin-beam sources.
//! * [`discriminators`]: single-pixel error bounds and decision rules.
//! * [`optimal_receiver`]: Fock-space construction of the optimal classical receiver.
//! * [`patterns`]: MNIST ingestion, noisy test-set assembly and the QRBD container.
//! * [`multipixel`]: parallel readout with finite signal/idler correlation length.
//! * [`knn`]: Hamming k-nearest-neighbor classification.

pub mod discriminators;
pub mod error;
pub mod knn;
pub mod multipixel;
pub mod optimal_receiver;
pub mod par;
pub mod patterns;
pub mod photonstats;
pub mod special;

pub use error::{Error, Result};
