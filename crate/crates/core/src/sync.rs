//! Feedback-path alignment: fractional time-delay and complex-gain estimation
//! against the transmitted reference, using the MLS preamble.
//!
//! Both preamble windows are band-limited-interpolated by the upsample factor
//! (transform-domain zero padding), circularly cross-correlated, and the peak
//! lag read off on the dense grid. The gain is a scalar least-squares fit over
//! the preamble after delay compensation.

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::ComplexSignal;
use num_complex::Complex64;

/// Default correlation peak-to-sidelobe floor below which alignment is
/// rejected.
pub const DEFAULT_PEAK_FLOOR_DB: f64 = 6.0;

/// Alignment estimate between a received signal and its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    /// Delay of the received signal in samples, resolution
    /// `1/upsample_factor`.
    pub delay_samples: f64,
    /// Complex scalar gain of the received signal after delay removal.
    pub complex_gain: Complex64,
    /// Correlation peak-to-sidelobe ratio in dB.
    pub peak_metric_db: f64,
}

impl SyncResult {
    /// Identity alignment: no delay, unit gain.
    pub fn identity() -> Self {
        Self {
            delay_samples: 0.0,
            complex_gain: Complex64::new(1.0, 0.0),
            peak_metric_db: f64::INFINITY,
        }
    }

    /// One CSV row: `delay,gain_re,gain_im,peak_db`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.delay_samples, self.complex_gain.re, self.complex_gain.im, self.peak_metric_db
        )
    }
}

/// Estimates delay and complex gain of `received` relative to `reference`.
/// Both signals must start with the same MLS preamble of `preamble_len`
/// samples; correlation is restricted to that window so the payload cannot
/// bias the estimate.
pub fn estimate_alignment(
    reference: &ComplexSignal,
    received: &ComplexSignal,
    upsample_factor: usize,
    preamble_len: usize,
    peak_floor_db: f64,
) -> Result<SyncResult> {
    reference.check_compatible(received)?;
    if upsample_factor == 0 {
        return Err(Error::Parameter("upsample_factor must be at least 1".into()));
    }
    if preamble_len < 8 || preamble_len > reference.len() {
        return Err(Error::Parameter(format!(
            "preamble length {preamble_len} outside usable range for signal of {}",
            reference.len()
        )));
    }

    let corr = fft::circular_xcorr_upsampled(
        &received.samples()[..preamble_len],
        &reference.samples()[..preamble_len],
        upsample_factor,
    );
    let dense_len = corr.len();
    let (peak_idx, peak_mag) = corr
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty correlation");

    // sidelobe scan outside the interpolation main lobe
    let exclusion = 4 * upsample_factor;
    let mut sidelobe = 0.0f64;
    for (i, v) in corr.iter().enumerate() {
        let dist = {
            let d = (i as isize - peak_idx as isize).unsigned_abs();
            d.min(dense_len - d)
        };
        if dist > exclusion {
            sidelobe = sidelobe.max(v.norm());
        }
    }
    let peak_metric_db = if sidelobe > 0.0 {
        20.0 * (peak_mag / sidelobe).log10()
    } else {
        f64::INFINITY
    };
    if peak_metric_db < peak_floor_db {
        return Err(Error::SyncFailure {
            peak_db: peak_metric_db,
            floor_db: peak_floor_db,
        });
    }

    // signed lag on the dense grid
    let signed = if peak_idx * 2 > dense_len {
        peak_idx as f64 - dense_len as f64
    } else {
        peak_idx as f64
    };
    let delay_samples = signed / upsample_factor as f64;

    // gain fit over the preamble interior after removing the delay
    let compensated = fft::fractional_delay(received.samples(), -delay_samples);
    let guard = 8 + delay_samples.abs().ceil() as usize;
    let span = guard..preamble_len - guard;
    let mut num = Complex64::ZERO;
    let mut den = 0.0;
    for i in span {
        num += compensated[i] * reference.samples()[i].conj();
        den += reference.samples()[i].norm_sqr();
    }
    if den <= 0.0 {
        return Err(Error::Parameter("reference preamble has zero energy".into()));
    }
    Ok(SyncResult {
        delay_samples,
        complex_gain: num / den,
        peak_metric_db,
    })
}

/// Applies the inverse of an estimated alignment and drops the preamble:
/// the received signal is advanced by the estimated delay (transform-domain
/// phase ramp), divided by the complex gain, and the first `preamble_len`
/// samples are removed.
pub fn align_and_strip(
    received: &ComplexSignal,
    sync: &SyncResult,
    preamble_len: usize,
) -> Result<ComplexSignal> {
    if preamble_len >= received.len() {
        return Err(Error::Parameter(format!(
            "preamble length {preamble_len} leaves no payload in signal of {}",
            received.len()
        )));
    }
    if sync.complex_gain.norm() == 0.0 {
        return Err(Error::Parameter("sync gain is zero".into()));
    }
    let mut shifted = if sync.delay_samples != 0.0 {
        fft::fractional_delay(received.samples(), -sync.delay_samples)
    } else {
        received.samples().to_vec()
    };
    let inv_gain = Complex64::new(1.0, 0.0) / sync.complex_gain;
    for v in &mut shifted {
        *v *= inv_gain;
    }
    ComplexSignal::new(shifted.split_off(preamble_len), received.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mls::{generate_mls, prepend_preamble};
    use crate::pulses::{assemble_multitone_if, build_gate_sequence};

    const FS: f64 = 250e6;

    /// Preamble plus a short multitone payload.
    fn test_signal() -> (ComplexSignal, usize) {
        let channels: Vec<_> = build_gate_sequence(21, 2, 3, 1.6e-6)
            .unwrap()
            .into_iter()
            .zip([20e6, 30e6])
            .map(|(ch, f)| ch.with_freq_offset(f))
            .collect();
        let mt = assemble_multitone_if(&channels, FS).unwrap();
        let preamble = generate_mls(10, 1).unwrap().with_samples_per_chip(2).unwrap();
        let tx = prepend_preamble(&mt.signal.scaled(0.4.into()), &preamble, 0.5);
        (tx, preamble.sample_len())
    }

    fn delayed_copy(signal: &ComplexSignal, delay: f64, gain: Complex64) -> ComplexSignal {
        let shifted = fft::fractional_delay(signal.samples(), delay);
        ComplexSignal::new(shifted, signal.sample_rate())
            .unwrap()
            .scaled(gain)
    }

    #[test]
    fn exact_copy_aligns_trivially() {
        let (tx, plen) = test_signal();
        let sync = estimate_alignment(&tx, &tx, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
        assert_eq!(sync.delay_samples, 0.0);
        assert!((sync.complex_gain - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(sync.peak_metric_db > 20.0);
    }

    #[test]
    fn fractional_delay_recovered_within_grid_resolution() {
        let (tx, plen) = test_signal();
        let rx = delayed_copy(&tx, 3.7, Complex64::new(1.0, 0.0));
        let sync = estimate_alignment(&tx, &rx, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
        assert!(
            (sync.delay_samples - 3.7).abs() <= 0.05,
            "estimated {}",
            sync.delay_samples
        );
        assert!((sync.complex_gain - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn delay_grid_is_unbiased_noise_free() {
        let (tx, plen) = test_signal();
        let mut worst = 0.0f64;
        for tenth in 0..100 {
            let d = tenth as f64 / 10.0;
            let rx = delayed_copy(&tx, d, Complex64::new(1.0, 0.0));
            let sync = estimate_alignment(&tx, &rx, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
            worst = worst.max((sync.delay_samples - d).abs());
        }
        assert!(worst <= 0.05, "worst delay error {worst}");
    }

    #[test]
    fn gain_and_delay_round_trip() {
        let (tx, plen) = test_signal();
        let gain = Complex64::from_polar(2.0, std::f64::consts::FRAC_PI_4);
        let rx = delayed_copy(&tx, 2.3, gain);
        let sync = estimate_alignment(&tx, &rx, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
        assert!((sync.complex_gain - gain).norm() / gain.norm() < 1e-6);

        let payload = align_and_strip(&rx, &sync, plen).unwrap();
        let expected = &tx.samples()[plen..];
        assert_eq!(payload.len(), expected.len());
        let peak = tx.peak();
        let mut worst = 0.0f64;
        for (a, b) in payload.samples().iter().zip(expected) {
            worst = worst.max((a - b).norm());
        }
        assert!(worst / peak < 1e-6, "relative error {}", worst / peak);
    }

    #[test]
    fn identity_sync_is_passthrough() {
        let (tx, plen) = test_signal();
        let payload = align_and_strip(&tx, &SyncResult::identity(), plen).unwrap();
        assert_eq!(payload.samples(), &tx.samples()[plen..]);
    }

    #[test]
    fn alignment_is_idempotent() {
        let (tx, plen) = test_signal();
        let rx = delayed_copy(&tx, 4.9, Complex64::new(0.8, 0.3));
        let sync = estimate_alignment(&tx, &rx, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
        // align the whole signal (preamble included), then re-estimate
        let aligned = {
            let shifted = fft::fractional_delay(rx.samples(), -sync.delay_samples);
            ComplexSignal::new(shifted, FS)
                .unwrap()
                .scaled(Complex64::new(1.0, 0.0) / sync.complex_gain)
        };
        let again = estimate_alignment(&tx, &aligned, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
        assert!(again.delay_samples.abs() < 0.01, "{}", again.delay_samples);
    }

    #[test]
    fn gain_matches_direct_fit() {
        let (tx, plen) = test_signal();
        let rx = delayed_copy(&tx, 6.0, Complex64::new(1.5, -0.4));
        let sync = estimate_alignment(&tx, &rx, 10, plen, DEFAULT_PEAK_FLOOR_DB).unwrap();
        // integer delay: compensate by slicing and fit directly
        let d = sync.delay_samples.round() as usize;
        assert_eq!(d, 6);
        let mut num = Complex64::ZERO;
        let mut den = 0.0;
        for i in 16..plen - 16 {
            num += rx.samples()[i + d] * tx.samples()[i].conj();
            den += tx.samples()[i].norm_sqr();
        }
        let direct = num / den;
        assert!((sync.complex_gain - direct).norm() / direct.norm() < 1e-9);
    }

    #[test]
    fn garbage_input_fails_sync() {
        let (tx, plen) = test_signal();
        // flat carrier has no correlation peak against the MLS
        let garbage = ComplexSignal::new(
            vec![Complex64::new(0.2, 0.1); tx.len()],
            FS,
        )
        .unwrap();
        let err = estimate_alignment(&tx, &garbage, 10, plen, DEFAULT_PEAK_FLOOR_DB);
        assert!(matches!(err, Err(Error::SyncFailure { .. })), "{err:?}");
    }
}
