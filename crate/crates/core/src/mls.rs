//! Maximum length sequences for the synchronization preamble.

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;
use num_complex::Complex64;

/// Primitive feedback tap masks for Fibonacci LFSRs, one per register order
/// `m`. Bit `i` of a mask selects state bit `i`, so a mask encodes the
/// recurrence `b[n+m] = XOR of b[n+i] over set bits i` — the polynomial
/// `x^m + sum x^i + 1` with bit 0 always present.
const PRIMITIVE_TAPS: &[(u32, u32)] = &[
    (2, (1 << 1) | 1),
    (3, (1 << 2) | 1),
    (4, (1 << 3) | 1),
    (5, (1 << 3) | 1),
    (6, (1 << 5) | 1),
    (7, (1 << 6) | 1),
    (8, (1 << 6) | (1 << 5) | (1 << 4) | 1),
    (9, (1 << 5) | 1),
    (10, (1 << 7) | 1),
    (11, (1 << 9) | 1),
    (12, (1 << 6) | (1 << 4) | (1 << 1) | 1),
    (13, (1 << 4) | (1 << 3) | (1 << 1) | 1),
    (14, (1 << 5) | (1 << 3) | (1 << 1) | 1),
    (15, (1 << 14) | 1),
    (16, (1 << 15) | (1 << 13) | (1 << 4) | 1),
];

/// A +/-1 chip sequence of length 2^m - 1 with two-valued circular
/// autocorrelation, optionally held for several samples per chip.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsPreamble {
    pub register_order: u32,
    pub feedback_taps: u32,
    pub chips: Vec<f64>,
    pub samples_per_chip: usize,
}

impl MlsPreamble {
    /// Number of samples the preamble occupies once upsampled.
    pub fn sample_len(&self) -> usize {
        self.chips.len() * self.samples_per_chip
    }

    pub fn with_samples_per_chip(mut self, samples_per_chip: usize) -> Result<Self> {
        if samples_per_chip == 0 {
            return Err(Error::Parameter("samples_per_chip must be at least 1".into()));
        }
        self.samples_per_chip = samples_per_chip;
        Ok(self)
    }

    /// The preamble alone as a complex signal: chips held `samples_per_chip`
    /// samples and scaled by `amplitude`.
    pub fn to_signal(&self, amplitude: f64, sample_rate: f64) -> Result<ComplexSignal> {
        let mut samples = Vec::with_capacity(self.sample_len());
        for chip in &self.chips {
            let v = Complex64::new(chip * amplitude, 0.0);
            samples.extend(std::iter::repeat(v).take(self.samples_per_chip));
        }
        ComplexSignal::new(samples, sample_rate)
    }
}

/// Generates a maximum length sequence from the built-in primitive-polynomial
/// table. `seed_state` is the initial register contents and must be nonzero
/// (its low `register_order` bits are used).
pub fn generate_mls(register_order: u32, seed_state: u32) -> Result<MlsPreamble> {
    let taps = PRIMITIVE_TAPS
        .iter()
        .find(|(m, _)| *m == register_order)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            Error::Parameter(format!(
                "no primitive polynomial tabulated for register order {register_order}"
            ))
        })?;
    let mask = (1u32 << register_order) - 1;
    let mut state = seed_state & mask;
    if state == 0 {
        return Err(Error::Parameter("LFSR seed state must be nonzero".into()));
    }
    let len = (1usize << register_order) - 1;
    let mut chips = Vec::with_capacity(len);
    for _ in 0..len {
        let bit = state & 1;
        chips.push(1.0 - 2.0 * bit as f64);
        let feedback = (state & taps).count_ones() & 1;
        state = (state >> 1) | (feedback << (register_order - 1));
    }
    Ok(MlsPreamble {
        register_order,
        feedback_taps: taps,
        chips,
        samples_per_chip: 1,
    })
}

/// Prepends the upsampled, scaled preamble to `signal`. The preamble occupies
/// `preamble.sample_len()` samples, which callers record so the payload can be
/// stripped after alignment.
pub fn prepend_preamble(
    signal: &ComplexSignal,
    preamble: &MlsPreamble,
    amplitude: f64,
) -> ComplexSignal {
    let mut samples = Vec::with_capacity(preamble.sample_len() + signal.len());
    for chip in &preamble.chips {
        let v = Complex64::new(chip * amplitude, 0.0);
        samples.extend(std::iter::repeat(v).take(preamble.samples_per_chip));
    }
    samples.extend_from_slice(signal.samples());
    ComplexSignal::new(samples, signal.sample_rate()).expect("non-empty by construction")
}
