//! Synthetic ground-truth power amplifier.
//!
//! The device is a linear gain times a dynamic transfer function: a complex
//! memory-polynomial kernel (static nonlinearity plus short FIR memory), a
//! slow multiplicative thermal gain driven by low-pass-filtered instantaneous
//! power, and an additive noise floor. It is the plant the predistorter has to
//! invert; nothing here is fitted to hardware.

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One kernel entry `b[k][l]`: nonlinear order `k` (1 = linear) at sample lag
/// `l`, weighting `x(n-l) * |x(n-l)|^(k-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelTap {
    pub order: usize,
    pub lag: usize,
    pub re: f64,
    pub im: f64,
}

impl KernelTap {
    pub fn new(order: usize, lag: usize, coeff: Complex64) -> Self {
        Self {
            order,
            lag,
            re: coeff.re,
            im: coeff.im,
        }
    }

    pub fn coeff(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// Behavioral PA parameters.
///
/// With only the `(order 1, lag 0)` tap the model collapses to a pure linear
/// gain. The thermal state starts cold (zero) on every call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaParams {
    /// Linear gain in dB.
    pub linear_gain_db: f64,
    /// Nonlinear kernel grid, stored as its nonzero entries.
    pub kernel: Vec<KernelTap>,
    /// Gain change per unit of filtered normalized power. Positive means the
    /// device gets hotter and louder during excitation.
    pub ltm_kappa: f64,
    /// One-pole time constant of the thermal filter, seconds.
    pub ltm_time_constant: f64,
    /// Complex white noise floor in dB relative to full-scale output
    /// (amplitude 1.0 times the linear gain). `None` disables noise.
    pub noise_floor_dbc: Option<f64>,
    /// Seed of the noise stream; equal seeds give identical noise.
    pub rng_seed: u64,
}

impl PaParams {
    /// Distortion-free device: gain only, no memory, no noise.
    pub fn linear(linear_gain_db: f64) -> Self {
        Self {
            linear_gain_db,
            kernel: vec![KernelTap::new(1, 0, Complex64::new(1.0, 0.0))],
            ltm_kappa: 0.0,
            ltm_time_constant: 1e-6,
            noise_floor_dbc: None,
            rng_seed: 0,
        }
    }

    pub fn with_seed(mut self, rng_seed: u64) -> Self {
        self.rng_seed = rng_seed;
        self
    }

    pub fn with_noise_floor(mut self, noise_floor_dbc: Option<f64>) -> Self {
        self.noise_floor_dbc = noise_floor_dbc;
        self
    }

    /// Linear gain as a voltage factor.
    pub fn linear_gain(&self) -> f64 {
        10f64.powf(self.linear_gain_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ltm_time_constant > 0.0) {
            return Err(Error::Parameter(format!(
                "ltm_time_constant must be positive, got {}",
                self.ltm_time_constant
            )));
        }
        if self.kernel.is_empty() {
            return Err(Error::Parameter("PA kernel must have at least one tap".into()));
        }
        for tap in &self.kernel {
            if tap.order == 0 {
                return Err(Error::Parameter("kernel order indices start at 1".into()));
            }
        }
        Ok(())
    }

    /// Kernel grouped by lag with ascending orders, for sample-wise evaluation.
    fn taps_by_lag(&self) -> Vec<(usize, Vec<(usize, Complex64)>)> {
        let mut lags: Vec<usize> = self.kernel.iter().map(|t| t.lag).collect();
        lags.sort_unstable();
        lags.dedup();
        lags.into_iter()
            .map(|lag| {
                let mut taps: Vec<(usize, Complex64)> = self
                    .kernel
                    .iter()
                    .filter(|t| t.lag == lag)
                    .map(|t| (t.order, t.coeff()))
                    .collect();
                taps.sort_unstable_by_key(|t| t.0);
                (lag, taps)
            })
            .collect()
    }

    /// Static kernel response to a constant input of amplitude `a`, before the
    /// linear gain: every lag fed the same sample, thermal term frozen.
    fn static_kernel(&self, a: f64) -> Complex64 {
        self.kernel
            .iter()
            .map(|t| t.coeff() * a * a.powi(t.order as i32 - 1))
            .sum()
    }
}

impl Default for PaParams {
    /// Synthetic defaults: about 3 dB compression and 10 degrees of AM/PM at
    /// full scale, short FIR memory at -20/-26/-30 dB, a slow thermal gain
    /// ramp, and a -66 dBc noise floor.
    fn default() -> Self {
        let c = Complex64::from_polar;
        Self {
            linear_gain_db: 25.0,
            kernel: vec![
                KernelTap::new(1, 0, Complex64::new(1.0, 0.0)),
                KernelTap::new(3, 0, Complex64::new(-0.26, 0.12)),
                KernelTap::new(5, 0, Complex64::new(-0.018, 0.006)),
                KernelTap::new(7, 0, Complex64::new(0.004, -0.001)),
                KernelTap::new(1, 1, c(0.10, -0.35)),
                KernelTap::new(1, 2, c(0.05, 0.80)),
                KernelTap::new(1, 3, c(0.0316, -1.60)),
                KernelTap::new(3, 1, c(0.008, 2.0)),
            ],
            ltm_kappa: 44.0,
            ltm_time_constant: 4e-3,
            noise_floor_dbc: Some(-66.0),
            rng_seed: 0x9a,
        }
    }
}

/// Runs the PA over a signal:
/// `y(n) = G * (1 + kappa*w(n)) * sum_{k,l} b[k][l] x(n-l)|x(n-l)|^(k-1) + noise`,
/// where `w` is the one-pole-filtered instantaneous power `|x(n)|^2` starting
/// from a cold state. Deterministic for a fixed `rng_seed`.
pub fn apply_pa(params: &PaParams, input: &ComplexSignal) -> Result<ComplexSignal> {
    params.validate()?;
    let gain = params.linear_gain();
    let x = input.samples();
    let n = x.len();
    let by_lag = params.taps_by_lag();

    let alpha = (-1.0 / (params.ltm_time_constant * input.sample_rate())).exp();
    let mut w = 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let noise_sigma = params
        .noise_floor_dbc
        .map(|dbc| gain * 10f64.powf(dbc / 20.0));

    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        w = alpha * w + (1.0 - alpha) * x[i].norm_sqr();
        let mut acc = Complex64::ZERO;
        for (lag, taps) in &by_lag {
            if i < *lag {
                continue;
            }
            let z = x[i - lag];
            let r2 = z.norm_sqr();
            for (order, coeff) in taps {
                // order k contributes x * |x|^(k-1)
                let k = *order as i32 - 1;
                let envelope = if k % 2 == 0 {
                    r2.powi(k / 2)
                } else {
                    r2.powi((k - 1) / 2) * r2.sqrt()
                };
                acc += coeff * z * envelope;
            }
        }
        let mut out = gain * (1.0 + params.ltm_kappa * w) * acc;
        if let Some(sigma) = noise_sigma {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            out += Complex64::new(re, im) * (sigma / std::f64::consts::SQRT_2);
        }
        y.push(out);
    }
    input.with_samples(y)
}

/// One row of the static AM/AM / AM/PM characterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmPoint {
    pub a_in: f64,
    pub a_out: f64,
    pub phase_deg: f64,
}

/// Static amplitude sweep from 0 to full scale: memory lags all see the same
/// constant sample and the thermal term is frozen at zero, isolating AM/AM and
/// AM/PM of the kernel.
pub fn am_curves(params: &PaParams, n_points: usize) -> Result<Vec<AmPoint>> {
    params.validate()?;
    if n_points < 2 {
        return Err(Error::Parameter("AM sweep needs at least 2 points".into()));
    }
    let gain = params.linear_gain();
    Ok((0..n_points)
        .map(|i| {
            let a_in = i as f64 / (n_points - 1) as f64;
            let response = params.static_kernel(a_in) * gain;
            AmPoint {
                a_in,
                a_out: response.norm(),
                phase_deg: if a_in > 0.0 {
                    response.arg().to_degrees()
                } else {
                    0.0
                },
            }
        })
        .collect())
}

/// Complex least-squares scalar fit of the PA output against a probe:
/// `g = <y, x> / <x, x>` at the probe's drive level. Used to normalize
/// comparisons so an undistorted baseline is gain- and phase-fair.
pub fn measure_linear_gain(params: &PaParams, probe: &ComplexSignal) -> Result<Complex64> {
    if probe.energy() <= 0.0 {
        return Err(Error::Parameter("probe signal has zero energy".into()));
    }
    let y = apply_pa(params, probe)?;
    let num: Complex64 = y
        .samples()
        .iter()
        .zip(probe.samples())
        .map(|(yi, xi)| yi * xi.conj())
        .sum();
    Ok(num / probe.energy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const FS: f64 = 250e6;

    fn constant_signal(value: Complex64, len: usize) -> ComplexSignal {
        ComplexSignal::new(vec![value; len], FS).unwrap()
    }

    fn white_probe(amplitude: f64, len: usize, seed: u64) -> ComplexSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..len)
            .map(|_| {
                Complex64::from_polar(
                    amplitude,
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        ComplexSignal::new(samples, FS).unwrap()
    }

    #[test]
    fn linear_kernel_is_pure_gain() {
        let pa = PaParams::linear(20.0);
        let x = white_probe(0.7, 256, 1);
        let y = apply_pa(&pa, &x).unwrap();
        for (yi, xi) in y.samples().iter().zip(x.samples()) {
            assert!((yi - xi * 10.0).norm() < 1e-12);
        }
    }

    #[test]
    fn cubic_tap_compresses_peak_gain() {
        // b1=1, b3=-0.1 real: |gain| at amplitude 1 is 0.9*G
        let mut pa = PaParams::linear(0.0);
        pa.kernel.push(KernelTap::new(3, 0, Complex64::new(-0.1, 0.0)));
        let x = constant_signal(Complex64::new(1.0, 0.0), 64);
        let y = apply_pa(&pa, &x).unwrap();
        let g = y.samples()[10].norm();
        assert!((g - 0.9).abs() < 1e-12, "gain {g}");
    }

    #[test]
    fn thermal_gain_rises_with_the_declared_time_constant() {
        let mut pa = PaParams::linear(0.0);
        pa.ltm_kappa = 0.05;
        pa.ltm_time_constant = 5e-6;
        // drive long enough to saturate the thermal state
        let len = (40e-6 * FS) as usize;
        let x = constant_signal(Complex64::new(1.0, 0.0), len);
        let y = apply_pa(&pa, &x).unwrap();
        let early = y.samples()[0].norm();
        let late = y.samples()[len - 1].norm();
        assert!(late > early, "envelope should rise: {early} -> {late}");
        assert!((late - 1.05).abs() < 1e-4, "saturated gain {late}");
        // at one time constant the drift has covered 1 - 1/e of its range
        let at_tau = y.samples()[(5e-6 * FS) as usize].norm();
        let progress = (at_tau - 1.0) / 0.05;
        assert!(
            (progress - (1.0 - (-1.0f64).exp())).abs() < 0.01,
            "progress at tau: {progress}"
        );
    }

    #[test]
    fn default_kernel_compression_and_am_pm_targets() {
        let pa = PaParams::default();
        let curve = am_curves(&pa, 101).unwrap();
        // monotone AM/AM up to full scale
        for pair in curve.windows(2) {
            assert!(pair[1].a_out >= pair[0].a_out, "AM/AM not monotone");
        }
        // compression and phase shift relative to the small-signal response
        let small = &curve[1];
        let slope = small.a_out / small.a_in;
        let full = curve.last().unwrap();
        let compression_db = 20.0 * (full.a_out / slope).log10();
        assert!(
            (-4.0..=-2.0).contains(&compression_db),
            "compression at full scale: {compression_db:.2} dB"
        );
        let am_pm = full.phase_deg - small.phase_deg;
        assert!(
            (7.0..=13.0).contains(&am_pm.abs()),
            "AM/PM at full scale: {am_pm:.2} deg"
        );
    }

    #[test]
    fn am_curves_linear_device() {
        let pa = PaParams::linear(25.0);
        let curve = am_curves(&pa, 11).unwrap();
        let gain = pa.linear_gain();
        for p in &curve {
            assert!((p.a_out - gain * p.a_in).abs() < 1e-9);
            assert_eq!(p.phase_deg, 0.0);
        }
    }

    #[test]
    fn imaginary_cubic_tap_gives_quadratic_am_pm() {
        let mut pa = PaParams::linear(0.0);
        pa.kernel.push(KernelTap::new(3, 0, Complex64::new(0.0, 0.05)));
        let curve = am_curves(&pa, 5).unwrap();
        // phase(a) = atan(0.05 a^2) ~ 0.05 a^2: quadrupling from a=0.5 to a=1
        let p_half = curve[2].phase_deg;
        let p_full = curve[4].phase_deg;
        assert!(p_full > 0.0 && p_half > 0.0);
        let ratio = p_full / p_half;
        assert!((ratio - 4.0).abs() < 0.1, "AM/PM growth ratio {ratio}");
    }

    #[test]
    fn linear_gain_measurement() {
        let linear = PaParams::linear(25.0);
        let probe = white_probe(0.3, 4096, 2);
        let g = measure_linear_gain(&linear, &probe).unwrap();
        assert!((g - Complex64::new(10f64.powf(1.25), 0.0)).norm() < 1e-9);

        let pa = PaParams::default().with_noise_floor(None);
        let gain = pa.linear_gain();
        // small-signal limit: within 0.1% of the linear gain
        let low = white_probe(0.01, 1 << 17, 3);
        let g_low = measure_linear_gain(&pa, &low).unwrap();
        assert!(
            (g_low.norm() - gain).abs() / gain < 1e-3,
            "small-signal gain {} vs {}",
            g_low.norm(),
            gain
        );
        // full drive compresses
        let high = white_probe(1.0, 1 << 14, 4);
        let g_high = measure_linear_gain(&pa, &high).unwrap();
        assert!(g_high.norm() < gain);
    }

    #[test]
    fn zero_energy_probe_rejected() {
        let pa = PaParams::linear(10.0);
        let probe = ComplexSignal::zeros(64, FS).unwrap();
        assert!(measure_linear_gain(&pa, &probe).is_err());
    }

    #[test]
    fn linear_path_is_homogeneous() {
        let mut pa = PaParams::linear(0.0);
        pa.kernel.push(KernelTap::new(1, 2, Complex64::new(0.2, 0.1)));
        let x = white_probe(0.5, 300, 5);
        let y1 = apply_pa(&pa, &x).unwrap();
        let y2 = apply_pa(&pa, &x.scaled(Complex64::new(3.0, 0.0))).unwrap();
        for (a, b) in y1.samples().iter().zip(y2.samples()) {
            assert!((b - a * 3.0).norm() < 1e-9);
        }
    }

    #[test]
    fn memoryless_kernel_depends_only_on_current_sample() {
        let mut pa = PaParams::linear(0.0);
        pa.kernel.push(KernelTap::new(3, 0, Complex64::new(-0.2, 0.05)));
        let x = white_probe(0.8, 128, 6);
        let y = apply_pa(&pa, &x).unwrap();
        // permute two far-apart samples; outputs permute identically
        let mut swapped = x.samples().to_vec();
        swapped.swap(20, 100);
        let ys = apply_pa(&pa, &ComplexSignal::new(swapped, FS).unwrap()).unwrap();
        assert!((ys.samples()[20] - y.samples()[100]).norm() < 1e-12);
        assert!((ys.samples()[100] - y.samples()[20]).norm() < 1e-12);
        assert!((ys.samples()[50] - y.samples()[50]).norm() < 1e-12);
    }

    #[test]
    fn thermal_state_is_causal() {
        let mut pa = PaParams::linear(0.0);
        pa.ltm_kappa = 0.1;
        pa.ltm_time_constant = 1e-6;
        let x = white_probe(0.9, 200, 7);
        let y = apply_pa(&pa, &x).unwrap();
        // changing the tail leaves the head untouched
        let mut altered = x.samples().to_vec();
        for s in &mut altered[150..] {
            *s *= 3.0;
        }
        let ya = apply_pa(&pa, &ComplexSignal::new(altered, FS).unwrap()).unwrap();
        for i in 0..150 {
            assert!((ya.samples()[i] - y.samples()[i]).norm() < 1e-12, "sample {i}");
        }
    }

    #[test]
    fn noise_stream_is_seed_deterministic() {
        let pa = PaParams::default().with_seed(42);
        let x = white_probe(0.2, 256, 8);
        let y1 = apply_pa(&pa, &x).unwrap();
        let y2 = apply_pa(&pa, &x).unwrap();
        assert_eq!(y1.samples(), y2.samples());
        let y3 = apply_pa(&pa.clone().with_seed(43), &x).unwrap();
        assert_ne!(y1.samples(), y3.samples());
    }
}
