//! Multi-fidelity Gaussian-process surrogates.
//!
//! The crate provides exact GP regression with the classical multi-fidelity
//! baselines (recursive AR1, bias correction, input-mapping calibration), a
//! sparse variational GP layer, and the multi-fidelity deep GP with embedded
//! input-space mapping layers, together with the analytical benchmark
//! problems, Latin hypercube designs and accuracy metrics used to compare
//! them.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod exact_gp;
pub mod kernels;
pub mod mfdgp;
pub mod nominal;
pub mod num;
pub mod svgp;

pub use error::{Error, Result};
