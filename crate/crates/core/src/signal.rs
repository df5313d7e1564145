//! Uniformly sampled complex-valued waveforms.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// A uniformly sampled complex signal: the universal carrier of baseband and
/// IF data throughout the chain.
///
/// Invariants: at least one sample, positive sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Parameter("signal must hold at least one sample".into()));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "sample rate must be positive and finite, got {sample_rate}"
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    /// All-zero signal of `len` samples.
    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![Complex64::ZERO; len], sample_rate)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: len >= 1
    }

    /// Signal duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Sum of |x|^2 over all samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean of |x|^2.
    pub fn mean_power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    /// Largest |x| over the signal.
    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// Pointwise multiplication by a complex scalar.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Replaces the sample vector, keeping the rate. Lengths may differ.
    pub(crate) fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }

    /// Checks that `other` can be compared sample-by-sample with `self`.
    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Parameter(format!(
                "signal length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::Parameter(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

/// Normalized mean-square error between two equal-length signals, in dB,
/// floored at -200 dB.
pub fn nmse_db(reference: &ComplexSignal, output: &ComplexSignal) -> Result<f64> {
    reference.check_compatible(output)?;
    let ref_energy = reference.energy();
    if ref_energy <= 0.0 {
        return Err(Error::Parameter("reference signal has zero energy".into()));
    }
    let err_energy: f64 = reference
        .samples()
        .iter()
        .zip(output.samples())
        .map(|(r, o)| (o - r).norm_sqr())
        .sum();
    let ratio = err_energy / ref_energy;
    Ok(if ratio < 1e-20 { -200.0 } else { 10.0 * ratio.log10() })
}
