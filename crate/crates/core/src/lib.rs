//! Desk-scale simulation of a frequency-multiplexed qubit control transmitter
//! with digital predistortion.
//!
//! The library covers the full chain: per-qubit gate pulse trains are mixed
//! into a multitone IF signal ([`pulses`]), distorted by a behavioral power
//! amplifier model ([`pa`]), time- and gain-aligned over an emulated feedback
//! path ([`sync`]), linearized by a memory-polynomial predistorter identified
//! with least squares ([`dpd`]), and finally scored by evolving independent
//! single-qubit states under the measured waveforms ([`qubit`]). The
//! [`experiment`] module wires everything into reproducible sequence runs and
//! output-power sweeps.
//!
//! All waveforms are complex baseband/IF samples at a uniform rate, carried by
//! [`ComplexSignal`]. Everything is deterministic under a fixed seed.

pub mod dpd;
pub mod error;
pub mod experiment;
mod fft;
pub mod io;
mod linalg;
pub mod mls;
pub mod pa;
pub mod pulses;
pub mod qubit;
pub mod signal;
pub mod sync;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use signal::ComplexSignal;
