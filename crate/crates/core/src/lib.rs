//! Detuning-noise laboratory for single-electron spin qubits.

pub mod conversion;
pub mod error;
pub mod fitting;
pub mod hyperfine;
pub mod psd;
pub mod qubit;
pub mod rng;
pub mod scenario;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
