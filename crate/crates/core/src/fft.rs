//! Transform-domain helpers: exact band-limited interpolation, circular
//! correlation, fractional delay, and FFT-based FIR filtering.

use num_complex::Complex64;
use rustfft::FftPlanner;

pub(crate) fn fft_in_place(data: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(data.len()).process(data);
}

/// Inverse FFT with 1/N scaling.
pub(crate) fn ifft_in_place(data: &mut [Complex64]) {
    let n = data.len();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(data);
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Zero-pads a length-N spectrum to length N*factor, keeping the signed
/// frequencies in place. The Nyquist bin of even-length inputs is split
/// between the positive and negative halves so the result stays exact for
/// band-limited signals.
pub(crate) fn zero_pad_spectrum(spectrum: &[Complex64], factor: usize) -> Vec<Complex64> {
    let n = spectrum.len();
    if factor <= 1 {
        return spectrum.to_vec();
    }
    let m = n * factor;
    let mut padded = vec![Complex64::ZERO; m];
    let half = n / 2;
    if n % 2 == 0 {
        padded[..half].copy_from_slice(&spectrum[..half]);
        // split Nyquist
        padded[half] = 0.5 * spectrum[half];
        padded[m - half] = 0.5 * spectrum[half];
        padded[m - half + 1..].copy_from_slice(&spectrum[half + 1..]);
    } else {
        padded[..=half].copy_from_slice(&spectrum[..=half]);
        padded[m - half..].copy_from_slice(&spectrum[half + 1..]);
    }
    padded
}

/// Band-limited interpolation by an integer factor (transform-domain zero
/// padding). `out[k*factor] == x[k]` up to roundoff.
pub(crate) fn upsample(x: &[Complex64], factor: usize) -> Vec<Complex64> {
    if factor <= 1 {
        return x.to_vec();
    }
    let mut spec = x.to_vec();
    fft_in_place(&mut spec);
    let mut padded = zero_pad_spectrum(&spec, factor);
    ifft_in_place(&mut padded);
    let gain = factor as f64;
    for v in padded.iter_mut() {
        *v *= gain;
    }
    padded
}

/// Circular cross-correlation `c[m] = sum_n a[n] * conj(b[n-m])`, evaluated on
/// a grid `factor` times denser than the input via spectrum zero padding.
/// Peaks at `m = d*factor` when `a` is `b` delayed by `d` samples.
pub(crate) fn circular_xcorr_upsampled(
    a: &[Complex64],
    b: &[Complex64],
    factor: usize,
) -> Vec<Complex64> {
    assert_eq!(a.len(), b.len());
    let mut fa = a.to_vec();
    let mut fb = b.to_vec();
    fft_in_place(&mut fa);
    fft_in_place(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    let mut padded = zero_pad_spectrum(&fa, factor);
    ifft_in_place(&mut padded);
    padded
}

/// Circularly shifts `x` later in time by `delay` samples (fractional allowed)
/// with an exact transform-domain phase ramp.
pub(crate) fn fractional_delay(x: &[Complex64], delay: f64) -> Vec<Complex64> {
    let n = x.len();
    let mut spec = x.to_vec();
    fft_in_place(&mut spec);
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate() {
        // signed bin index
        let kf = if k <= half { k as f64 } else { k as f64 - n as f64 };
        let phase = -2.0 * std::f64::consts::PI * kf * delay / n as f64;
        *v *= Complex64::from_polar(1.0, phase);
    }
    // A fractional shift of the Nyquist bin is ambiguous; splitting it keeps
    // the operation norm-preserving and self-inverse for band-limited inputs.
    if n % 2 == 0 {
        let phase = std::f64::consts::PI * delay;
        spec[half] *= phase.cos();
    }
    ifft_in_place(&mut spec);
    spec
}

/// Linear convolution of `x` with real FIR `taps` (odd length), trimmed to the
/// input length with the group delay `(taps.len()-1)/2` removed.
pub(crate) fn fir_filter_compensated(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    assert!(taps.len() % 2 == 1, "linear-phase FIR needs odd length");
    let n = x.len();
    let full = n + taps.len() - 1;
    let m = full.next_power_of_two();
    let mut fx = vec![Complex64::ZERO; m];
    fx[..n].copy_from_slice(x);
    let mut ft = vec![Complex64::ZERO; m];
    for (i, t) in taps.iter().enumerate() {
        ft[i] = Complex64::new(*t, 0.0);
    }
    fft_in_place(&mut fx);
    fft_in_place(&mut ft);
    for (a, b) in fx.iter_mut().zip(&ft) {
        *a *= b;
    }
    ifft_in_place(&mut fx);
    let delay = (taps.len() - 1) / 2;
    fx[delay..delay + n].to_vec()
}
