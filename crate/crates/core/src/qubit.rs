//! Single-qubit state evolution under sampled control waveforms.
//!
//! Per-qubit basebands come out of a digital downconverter (mix, linear-phase
//! low-pass, amplitude/phase calibration on the first driving pulse). The
//! rotating-frame Hamiltonian `H = -(Omega_R/2)(Re{s} sx + Im{s} sy)` is held
//! constant over each sample and exponentiated in closed form through the
//! Pauli identity, so the only discretization error left is the
//! piecewise-constant approximation itself.

use crate::error::{Error, Result};
use crate::fft;
use crate::pulses::{GateKind, GatePulse, QubitChannel};
use crate::signal::ComplexSignal;
use num_complex::Complex64;
use std::f64::consts::PI;

type Matrix2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::ZERO;
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Normalized two-level state `alpha|0> + beta|1>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl QubitState {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Parameter("state must have finite nonzero norm".into()));
        }
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Parameter(format!(
                "state norm deviates from 1 by {:.3e}",
                (norm - 1.0).abs()
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn ground() -> Self {
        Self { alpha: ONE, beta: ZERO }
    }

    pub fn excited() -> Self {
        Self { alpha: ZERO, beta: ONE }
    }

    pub fn norm(&self) -> f64 {
        (self.alpha.norm_sqr() + self.beta.norm_sqr()).sqrt()
    }

    pub fn renormalized(&self) -> Self {
        let n = self.norm();
        Self {
            alpha: self.alpha / n,
            beta: self.beta / n,
        }
    }

    /// Cartesian Bloch-sphere coordinates.
    pub fn bloch(&self) -> BlochPoint {
        let cross = self.alpha.conj() * self.beta;
        BlochPoint {
            x: 2.0 * cross.re,
            y: 2.0 * cross.im,
            z: self.alpha.norm_sqr() - self.beta.norm_sqr(),
        }
    }
}

/// Point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// 2x2 unitary evolution matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2 {
    pub m: Matrix2,
}

impl Unitary2 {
    pub fn identity() -> Self {
        Self {
            m: [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &Unitary2) -> Unitary2 {
        let a = &self.m;
        let b = &rhs.m;
        let mut m = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Unitary2 { m }
    }

    pub fn apply(&self, psi: &QubitState) -> QubitState {
        QubitState {
            alpha: self.m[0][0] * psi.alpha + self.m[0][1] * psi.beta,
            beta: self.m[1][0] * psi.alpha + self.m[1][1] * psi.beta,
        }
    }

    pub fn adjoint(&self) -> Unitary2 {
        Unitary2 {
            m: [
                [self.m[0][0].conj(), self.m[1][0].conj()],
                [self.m[0][1].conj(), self.m[1][1].conj()],
            ],
        }
    }

    /// Largest entry of `U^H U - I` in magnitude.
    pub fn unitarity_deviation(&self) -> f64 {
        let p = self.adjoint().mul(self);
        let mut dev = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { ONE } else { ZERO };
                dev = dev.max((p.m[i][j] - expect).norm());
            }
        }
        dev
    }

    /// Gram-Schmidt re-orthonormalization of the columns.
    pub fn renormalized(&self) -> Unitary2 {
        let c0 = [self.m[0][0], self.m[1][0]];
        let n0 = (c0[0].norm_sqr() + c0[1].norm_sqr()).sqrt();
        let q0 = [c0[0] / n0, c0[1] / n0];
        let c1 = [self.m[0][1], self.m[1][1]];
        let proj = q0[0].conj() * c1[0] + q0[1].conj() * c1[1];
        let mut q1 = [c1[0] - proj * q0[0], c1[1] - proj * q0[1]];
        let n1 = (q1[0].norm_sqr() + q1[1].norm_sqr()).sqrt();
        q1 = [q1[0] / n1, q1[1] / n1];
        Unitary2 {
            m: [[q0[0], q1[0]], [q0[1], q1[1]]],
        }
    }
}

/// Rotating-frame Hamiltonian of one baseband sample:
/// `H = -(rabi_max/2) (Re{s} sx + Im{s} sy)`; Hermitian with zero trace.
pub fn hamiltonian_step(s_bb_sample: Complex64, rabi_max: f64) -> Matrix2 {
    let f = -0.5 * rabi_max;
    [
        [ZERO, f * s_bb_sample.conj()],
        [f * s_bb_sample, ZERO],
    ]
}

/// Exact exponential `exp(-j H dt)` of a Hermitian 2x2 matrix via the Pauli
/// decomposition; unitary to roundoff with no iterative method.
pub fn step_unitary(h: &Matrix2, dt: f64) -> Unitary2 {
    // H = a0 I + ax sx + ay sy + az sz
    let a0 = 0.5 * (h[0][0].re + h[1][1].re);
    let ax = h[1][0].re;
    let ay = h[1][0].im;
    let az = 0.5 * (h[0][0].re - h[1][1].re);
    let r = (ax * ax + ay * ay + az * az).sqrt();
    let theta = r * dt;
    let (sin, cos) = theta.sin_cos();
    let phase = Complex64::from_polar(1.0, -a0 * dt);
    if r == 0.0 {
        return Unitary2 {
            m: [[phase, ZERO], [ZERO, phase]],
        };
    }
    let (nx, ny, nz) = (ax / r, ay / r, az / r);
    // cos I - j sin (n . sigma)
    let j_sin = Complex64::new(0.0, -sin);
    let m = [
        [
            phase * (Complex64::new(cos, 0.0) + j_sin * nz),
            phase * j_sin * Complex64::new(nx, -ny),
        ],
        [
            phase * j_sin * Complex64::new(nx, ny),
            phase * (Complex64::new(cos, 0.0) - j_sin * nz),
        ],
    ];
    Unitary2 { m }
}

/// Total evolution operator plus the per-sample Bloch trajectory.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub unitary: Unitary2,
    /// N+1 points: the initial state, then one per sample.
    pub trajectory: Vec<BlochPoint>,
}

const RENORM_INTERVAL: usize = 1 << 16;

fn evolve_core<F: FnMut(usize, &QubitState)>(
    s_bb: &ComplexSignal,
    rabi_max: f64,
    substeps: usize,
    initial: &QubitState,
    mut observe: F,
) -> Result<(Unitary2, QubitState)> {
    if substeps == 0 {
        return Err(Error::Parameter("substeps must be at least 1".into()));
    }
    let dt = 1.0 / (s_bb.sample_rate() * substeps as f64);
    let mut u_total = Unitary2::identity();
    let mut psi = *initial;
    observe(0, &psi);
    for (n, s) in s_bb.samples().iter().enumerate() {
        let h = hamiltonian_step(*s, rabi_max);
        let step = step_unitary(&h, dt);
        for _ in 0..substeps {
            // later factors multiply from the left: time ordering
            u_total = step.mul(&u_total);
            psi = step.apply(&psi);
        }
        if (n + 1) % RENORM_INTERVAL == 0 {
            u_total = u_total.renormalized();
            psi = psi.renormalized();
        }
        observe(n + 1, &psi);
    }
    Ok((u_total, psi))
}

/// Evolves `initial` under the sampled baseband with sample-hold of `s_bb`
/// within each of `substeps` sub-intervals per sample. Returns the ordered
/// product of the per-step exponentials (latest factor leftmost) and the full
/// Bloch trajectory.
pub fn evolve(
    s_bb: &ComplexSignal,
    rabi_max: f64,
    substeps: usize,
    initial: &QubitState,
) -> Result<Evolution> {
    let mut trajectory = Vec::with_capacity(s_bb.len() + 1);
    let (unitary, _) = evolve_core(s_bb, rabi_max, substeps, initial, |_, psi| {
        trajectory.push(psi.bloch());
    })?;
    Ok(Evolution { unitary, trajectory })
}

/// Evolves and captures the state at the requested sample counts (`marks`
/// sorted, each in `0..=len`). Cheaper than a full trajectory when only
/// sequence boundaries matter.
pub fn evolve_states(
    s_bb: &ComplexSignal,
    rabi_max: f64,
    substeps: usize,
    initial: &QubitState,
    marks: &[usize],
) -> Result<(Unitary2, Vec<QubitState>)> {
    for pair in marks.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Parameter("marks must be strictly increasing".into()));
        }
    }
    if let Some(last) = marks.last() {
        if *last > s_bb.len() {
            return Err(Error::Parameter(format!(
                "mark {last} beyond signal of {} samples",
                s_bb.len()
            )));
        }
    }
    let mut states = Vec::with_capacity(marks.len());
    let mut next = 0usize;
    let (unitary, _) = evolve_core(s_bb, rabi_max, substeps, initial, |n, psi| {
        while next < marks.len() && marks[next] == n {
            states.push(*psi);
            next += 1;
        }
    })?;
    Ok((unitary, states))
}

/// State fidelity `|<psi_ref|psi>|^2`.
pub fn fidelity(psi: &QubitState, psi_ref: &QubitState) -> f64 {
    (psi_ref.alpha.conj() * psi.alpha + psi_ref.beta.conj() * psi.beta).norm_sqr()
}

/// The unitary a gate label promises: `i (cos(phi) sx + sin(phi) sy)` for the
/// four pi-gates (exactly what an undistorted calibrated pi-pulse realizes,
/// global phase included), identity for idle.
pub fn ideal_gate_unitary(kind: GateKind) -> Unitary2 {
    if !kind.is_pi() {
        return Unitary2::identity();
    }
    let phi = kind.phase();
    let j = Complex64::new(0.0, 1.0);
    Unitary2 {
        m: [
            [ZERO, j * Complex64::from_polar(1.0, -phi)],
            [j * Complex64::from_polar(1.0, phi), ZERO],
        ],
    }
}

/// Folds the ideal gate unitaries of a pulse train over an initial state.
pub fn ideal_sequence_state(gates: &[GatePulse], initial: &QubitState) -> QubitState {
    let mut psi = *initial;
    for g in gates {
        psi = ideal_gate_unitary(g.kind).apply(&psi);
    }
    psi
}

// ---------------------------------------------------------------------------
// digital downconversion
// ---------------------------------------------------------------------------

/// Kaiser-window FIR design: 70 dB stopband, transition band one `bandwidth`
/// wide centered past the passband edge.
fn design_lowpass(sample_rate: f64, bandwidth: f64) -> Vec<f64> {
    let attenuation = 70.0;
    let transition = bandwidth; // from bw/2 to 1.5*bw
    let delta_omega = 2.0 * PI * transition / sample_rate;
    let mut n = ((attenuation - 7.95) / (2.285 * delta_omega)).ceil() as usize + 1;
    if n % 2 == 0 {
        n += 1;
    }
    let beta = 0.1102 * (attenuation - 8.7);
    let cutoff = bandwidth / sample_rate; // normalized; midpoint of transition
    let mid = (n - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(beta);
    (0..n)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let w = bessel_i0(beta * (1.0 - (t / mid).powi(2)).max(0.0).sqrt()) / i0_beta;
            sinc * w
        })
        .collect()
}

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn mix_and_filter(
    if_signal: &ComplexSignal,
    freq_offset: f64,
    bandwidth: f64,
) -> Result<Vec<Complex64>> {
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter("bandwidth must be positive".into()));
    }
    let fs = if_signal.sample_rate();
    if freq_offset.abs() + bandwidth / 2.0 >= fs / 2.0 {
        return Err(Error::Parameter(format!(
            "offset {freq_offset} Hz plus half bandwidth exceeds Nyquist at {fs} Hz"
        )));
    }
    let step = -2.0 * PI * freq_offset / fs;
    let mixed: Vec<Complex64> = if_signal
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| s * Complex64::from_polar(1.0, step * i as f64))
        .collect();
    let taps = design_lowpass(fs, bandwidth);
    Ok(fft::fir_filter_compensated(&mixed, &taps))
}

/// Locates the calibration window inside the first driving pulse: samples of
/// the first above-half-peak run, trimmed to its middle, with the window
/// length capped by the shortest run so back-to-back pulses cannot smear the
/// estimate across a phase step.
fn calibration_window(samples: &[Complex64]) -> Result<(usize, usize)> {
    let peak = samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
    if peak < 1e-12 {
        return Err(Error::Calibration("no driving pulse found".into()));
    }
    let threshold = 0.5 * peak;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        if s.norm() >= threshold {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(a) = start.take() {
            if i - a >= 4 {
                runs.push((a, i));
            }
        }
    }
    if let Some(a) = start {
        if samples.len() - a >= 4 {
            runs.push((a, samples.len()));
        }
    }
    let first = *runs
        .first()
        .ok_or_else(|| Error::Calibration("driving pulses too short to calibrate".into()))?;
    let min_len = runs.iter().map(|(a, b)| b - a).min().unwrap();
    let a = first.0 + (0.3 * min_len as f64) as usize;
    let b = first.0 + (0.7 * min_len as f64).ceil() as usize;
    if b <= a {
        return Err(Error::Calibration("calibration window collapsed".into()));
    }
    Ok((a, b))
}

/// Digitally downconverts one qubit's tone: mixes by `-freq_offset`, low-pass
/// filters to `bandwidth` (linear phase, group delay removed), and normalizes
/// so the first driving pulse has amplitude 1 and phase 0.
pub fn downconvert_channel(
    if_signal: &ComplexSignal,
    freq_offset: f64,
    bandwidth: f64,
) -> Result<ComplexSignal> {
    let filtered = mix_and_filter(if_signal, freq_offset, bandwidth)?;
    let (a, b) = calibration_window(&filtered)?;
    let cal: Complex64 =
        filtered[a..b].iter().sum::<Complex64>() / (b - a) as f64;
    if cal.norm() < 1e-12 {
        return Err(Error::Calibration(
            "first driving pulse averages to zero".into(),
        ));
    }
    let inv = ONE / cal;
    if_signal.with_samples(filtered.into_iter().map(|s| s * inv).collect())
}

/// Evolves the qubit under the *undistorted* transmit signal, downconverted
/// and calibrated exactly like the measured path: the fair comparison
/// baseline that keeps multitone interference out of the distortion score.
pub fn theoretical_reference_state(
    x_if: &ComplexSignal,
    channel: &QubitChannel,
    rabi_max: f64,
    bandwidth: f64,
    substeps: usize,
) -> Result<QubitState> {
    let bb = downconvert_channel(x_if, channel.freq_offset, bandwidth)?;
    let (_, psi) = evolve_core(
        &bb,
        rabi_max,
        substeps,
        &QubitState::ground(),
        |_, _| {},
    )?;
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::{assemble_multitone_if, build_gate_sequence, GatePulse};

    const FS: f64 = 250e6;
    const T: f64 = 1.6e-6;

    fn constant(s: Complex64, len: usize) -> ComplexSignal {
        ComplexSignal::new(vec![s; len], FS).unwrap()
    }

    /// Closed-form rotation for a constant drive `A e^{j phi}` held `T`
    /// seconds: `cos(h) I + j sin(h) (cos(phi) sx + sin(phi) sy)` with
    /// `h = rabi * A * T / 2`.
    fn analytic_constant_pulse(amp: f64, phi: f64, rabi: f64, duration: f64) -> Unitary2 {
        let h = 0.5 * rabi * amp * duration;
        let j = Complex64::new(0.0, 1.0);
        let (sin, cos) = h.sin_cos();
        Unitary2 {
            m: [
                [
                    Complex64::new(cos, 0.0),
                    j * sin * Complex64::from_polar(1.0, -phi),
                ],
                [
                    j * sin * Complex64::from_polar(1.0, phi),
                    Complex64::new(cos, 0.0),
                ],
            ],
        }
    }

    #[test]
    fn hamiltonian_instantiations() {
        let rabi = 2.0 * PI * 1e6;
        let h0 = hamiltonian_step(ZERO, rabi);
        assert_eq!(h0, [[ZERO, ZERO], [ZERO, ZERO]]);
        // s = 1: H = -(rabi/2) sigma_x
        let hx = hamiltonian_step(ONE, rabi);
        assert_eq!(hx[0][1], Complex64::new(-0.5 * rabi, 0.0));
        assert_eq!(hx[1][0], Complex64::new(-0.5 * rabi, 0.0));
        // s = j: H = -(rabi/2) sigma_y
        let hy = hamiltonian_step(Complex64::new(0.0, 1.0), rabi);
        assert_eq!(hy[0][1], Complex64::new(0.0, 0.5 * rabi));
        assert_eq!(hy[1][0], Complex64::new(0.0, -0.5 * rabi));
        // Hermitian, traceless
        assert_eq!(hy[0][0], ZERO);
        assert_eq!(hy[1][1], ZERO);
    }

    #[test]
    fn zero_hamiltonian_steps_to_identity() {
        let u = step_unitary(&[[ZERO; 2]; 2], 1e-9);
        assert_eq!(u, Unitary2::identity());
    }

    #[test]
    fn composed_x_steps_make_a_pi_flip() {
        // hold H = -(pi/(2T)) sigma_x for total time T across many steps
        let rabi = PI / T; // amplitude-1 drive: Omega*T = pi
        let steps = 400;
        let dt = T / steps as f64;
        let h = hamiltonian_step(ONE, rabi);
        let mut u = Unitary2::identity();
        for _ in 0..steps {
            u = step_unitary(&h, dt).mul(&u);
        }
        let flipped = u.apply(&QubitState::ground());
        assert!(flipped.alpha.norm() < 1e-12);
        assert!((flipped.beta.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_steps_compose_exactly() {
        let h = hamiltonian_step(Complex64::new(0.7, -0.4), 3e6);
        let dt = 8e-9;
        let whole = step_unitary(&h, dt);
        let half = step_unitary(&h, dt / 2.0);
        let composed = half.mul(&half);
        for i in 0..2 {
            for j in 0..2 {
                assert!((whole.m[i][j] - composed.m[i][j]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_signal_evolves_trivially() {
        let s = ComplexSignal::zeros(1000, FS).unwrap();
        let ev = evolve(&s, PI / T, 1, &QubitState::ground()).unwrap();
        assert!(ev.unitary.unitarity_deviation() < 1e-14);
        assert!((ev.unitary.m[0][0] - ONE).norm() < 1e-14);
        assert_eq!(ev.trajectory.len(), 1001);
        for p in &ev.trajectory {
            assert!((p.z - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_oracle_over_angle_grid() {
        // rotations pi/4, pi/2, pi, 2pi at several phases and amplitudes
        let rabi = PI / T;
        for (i, target) in [0.25 * PI, 0.5 * PI, PI, 2.0 * PI].iter().enumerate() {
            for (j, phi) in [0.0, 0.5 * PI, 1.0, 4.0].iter().enumerate() {
                let amp = 0.4 + 0.2 * (i as f64) + 0.05 * j as f64;
                let duration = target / (rabi * amp);
                let n = (duration * FS).round() as usize;
                // quantize duration to the grid and recompute the amplitude
                let duration = n as f64 / FS;
                let amp = target / (rabi * duration);
                let s = constant(Complex64::from_polar(amp, *phi), n);
                let ev = evolve(&s, rabi, 1, &QubitState::ground()).unwrap();
                let oracle = analytic_constant_pulse(amp, *phi, rabi, duration);
                let got = ev.unitary.apply(&QubitState::ground());
                let want = oracle.apply(&QubitState::ground());
                let err = 1.0 - fidelity(&got, &want);
                assert!(err < 1e-9, "theta={target} phi={phi}: err {err:.2e}");
            }
        }
    }

    #[test]
    fn pi_pulse_reaches_the_excited_state() {
        let rabi = PI / T;
        let n = (T * FS).round() as usize;
        let s = constant(ONE, n);
        let ev = evolve(&s, rabi, 1, &QubitState::ground()).unwrap();
        let f = fidelity(&ev.unitary.apply(&QubitState::ground()), &QubitState::excited());
        assert!(f > 1.0 - 1e-9, "fidelity {f}");
    }

    #[test]
    fn substep_halving_changes_nothing_for_sample_hold() {
        let channels = build_gate_sequence(7, 4, 3, T).unwrap();
        let channels: Vec<_> = channels
            .into_iter()
            .zip([20e6, 30e6, 40e6, 50e6])
            .map(|(ch, f)| ch.with_freq_offset(f))
            .collect();
        let mt = assemble_multitone_if(&channels, FS).unwrap();
        let bb = downconvert_channel(&mt.signal, 20e6, 4e6).unwrap();
        let rabi = PI / T;
        let f1 = {
            let ev = evolve(&bb, rabi, 1, &QubitState::ground()).unwrap();
            fidelity(&ev.unitary.apply(&QubitState::ground()), &QubitState::ground())
        };
        let f2 = {
            let ev = evolve(&bb, rabi, 2, &QubitState::ground()).unwrap();
            fidelity(&ev.unitary.apply(&QubitState::ground()), &QubitState::ground())
        };
        assert!((f1 - f2).abs() < 1e-8, "dF = {:.2e}", (f1 - f2).abs());
    }

    #[test]
    fn product_formula_error_is_first_order() {
        // smooth envelope with distinct endpoints and a rotating axis, so the
        // first-order product-formula error term cannot telescope away
        let rabi = PI / T;
        let shape = |t: f64| {
            Complex64::from_polar(
                0.9 * (0.3 + 0.7 * t / T),
                2.5 * t / T + 0.3 * (2.0 * PI * t / T).sin(),
            )
        };
        let evolve_at = |mult: usize| {
            let n = ((T * FS) as usize) * mult;
            let fs = FS * mult as f64;
            let s = ComplexSignal::new(
                (0..n).map(|i| shape(i as f64 / fs)).collect(),
                fs,
            )
            .unwrap();
            evolve(&s, rabi, 1, &QubitState::ground()).unwrap().unitary
        };
        let truth = evolve_at(16);
        let dist = |a: &Unitary2, b: &Unitary2| {
            let mut d = 0.0f64;
            for i in 0..2 {
                for j in 0..2 {
                    d = d.max((a.m[i][j] - b.m[i][j]).norm());
                }
            }
            d
        };
        let e1 = dist(&evolve_at(1), &truth);
        let e2 = dist(&evolve_at(2), &truth);
        let ratio = e1 / e2;
        assert!(
            (1.5..=3.0).contains(&ratio),
            "step halving error ratio {ratio} (e1={e1:.2e}, e2={e2:.2e})"
        );
    }

    #[test]
    fn norm_is_conserved_over_long_products() {
        let s = ComplexSignal::new(
            (0..10_000)
                .map(|i| Complex64::from_polar(0.8, 0.3 * (i as f64 * 0.01).sin()))
                .collect(),
            FS,
        )
        .unwrap();
        let (u, states) = evolve_states(
            &s,
            PI / T,
            1,
            &QubitState::ground(),
            &[10_000],
        )
        .unwrap();
        assert!((states[0].norm() - 1.0).abs() < 1e-10);
        assert!(u.unitarity_deviation() < 1e-10);
    }

    #[test]
    fn fidelity_limits() {
        let g = QubitState::ground();
        let e = QubitState::excited();
        assert_eq!(fidelity(&g, &g), 1.0);
        assert_eq!(fidelity(&g, &e), 0.0);
        let plus = QubitState::new(
            Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        )
        .unwrap();
        assert!((fidelity(&plus, &g) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn phase_covariance_rotates_the_axis() {
        let rabi = PI / T;
        let n = (T * FS) as usize;
        let gamma = 0.77;
        // half-pi pulse about phi=0, then about phi=gamma
        let amp = 0.5;
        let ev0 = evolve(&constant(Complex64::from_polar(amp, 0.0), n), rabi, 1, &QubitState::ground()).unwrap();
        let ev1 = evolve(&constant(Complex64::from_polar(amp, gamma), n), rabi, 1, &QubitState::ground()).unwrap();
        let b0 = ev0.unitary.apply(&QubitState::ground()).bloch();
        let b1 = ev1.unitary.apply(&QubitState::ground()).bloch();
        // equatorial components rotate by gamma, z stays
        let (sin, cos) = gamma.sin_cos();
        let rx = cos * b0.x - sin * b0.y;
        let ry = sin * b0.x + cos * b0.y;
        assert!((b1.x - rx).abs() < 1e-10);
        assert!((b1.y - ry).abs() < 1e-10);
        assert!((b1.z - b0.z).abs() < 1e-12);
    }

    #[test]
    fn downconvert_recovers_rectangular_envelope() {
        // idle, X pulse, idle at a 20 MHz offset
        let gates = vec![
            GatePulse::new(GateKind::Idle, 0.0, T, 0.0).unwrap(),
            GatePulse::new(GateKind::XpiPlus, 0.3, T, T).unwrap(),
            GatePulse::new(GateKind::Idle, 0.0, T, 2.0 * T).unwrap(),
        ];
        let ch = QubitChannel::new(0, 20e6, gates).unwrap();
        let mt = assemble_multitone_if(&[ch], FS).unwrap();
        let bb = downconvert_channel(&mt.signal, 20e6, 4e6).unwrap();
        // pulse interior sits at amplitude 1, phase 0 up to passband ripple
        let mid = &bb.samples()[500..700];
        for s in mid {
            assert!((s - ONE).norm() < 0.01, "{s}");
        }
        let mean = mid.iter().sum::<Complex64>() / mid.len() as f64;
        assert!((mean - ONE).norm() < 1e-3, "interior mean {mean}");
        // idle interior is quiet
        for s in &bb.samples()[100..250] {
            assert!(s.norm() < 3e-3);
        }
    }

    #[test]
    fn neighbor_tone_is_suppressed_but_visible() {
        let gates = vec![GatePulse::new(GateKind::XpiPlus, 0.3, 16.0 * T, 0.0).unwrap()];
        let target = QubitChannel::new(0, 0.0, gates.clone()).unwrap();
        let neighbor = QubitChannel::new(1, 10e6, gates).unwrap();
        let mt = assemble_multitone_if(&[target, neighbor], FS).unwrap();
        let bb = downconvert_channel(&mt.signal, 0.0, 4e6).unwrap();
        // project the calibrated interior onto the 10 MHz residual
        let span = 2000..4000;
        let step = -2.0 * PI * 10e6 / FS;
        let mut acc = ZERO;
        for i in span.clone() {
            acc += bb.samples()[i] * Complex64::from_polar(1.0, step * i as f64);
        }
        let residual = (acc / (span.len()) as f64).norm();
        assert!(residual < 1e-3, "neighbor not suppressed: {residual:.2e}");
        assert!(residual > 1e-6, "suppression unrealistically perfect");
    }

    #[test]
    fn all_idle_signal_fails_calibration() {
        let s = ComplexSignal::zeros(4000, FS).unwrap();
        assert!(matches!(
            downconvert_channel(&s, 20e6, 4e6),
            Err(Error::Calibration(_))
        ));
    }

    /// Re-tiles a channel with idle slots on both ends, so the capture holds
    /// the full filtered precursor and settling tail of every pulse.
    fn pad_idle(ch: &QubitChannel) -> QubitChannel {
        let duration = ch.gates()[0].duration;
        let mut gates = vec![GatePulse::new(GateKind::Idle, 0.0, duration, 0.0).unwrap()];
        let mut t = duration;
        for g in ch.gates() {
            gates.push(GatePulse::new(g.kind, g.amplitude, g.duration, t).unwrap());
            t += g.duration;
        }
        gates.push(GatePulse::new(GateKind::Idle, 0.0, duration, t).unwrap());
        QubitChannel::new(ch.qubit_id, ch.freq_offset, gates).unwrap()
    }

    #[test]
    fn reference_state_logic() {
        let rabi = PI / T;
        // single channel: reference equals the ideal sequence state
        let solo: Vec<_> = build_gate_sequence(7, 1, 2, T)
            .unwrap()
            .iter()
            .map(|ch| pad_idle(ch).with_freq_offset(20e6))
            .collect();
        let mt = assemble_multitone_if(&solo, FS).unwrap();
        let reference =
            theoretical_reference_state(&mt.signal, &solo[0], rabi, 4e6, 1).unwrap();
        let ideal = ideal_sequence_state(solo[0].gates(), &QubitState::ground());
        let f = fidelity(&reference, &ideal);
        assert!(f > 1.0 - 1e-6, "solo channel fidelity {f}");

        // reference path applied to its own signal is an exact self-comparison
        let again = theoretical_reference_state(&mt.signal, &solo[0], rabi, 4e6, 1).unwrap();
        assert_eq!(reference, again);
        assert!((fidelity(&reference, &again) - 1.0).abs() < 1e-12);

        // four tones: interference keeps the reference away from the ideal
        let four: Vec<_> = build_gate_sequence(7, 4, 4, T)
            .unwrap()
            .iter()
            .zip([20e6, 30e6, 40e6, 50e6])
            .map(|(ch, f)| pad_idle(ch).with_freq_offset(f))
            .collect();
        let mt4 = assemble_multitone_if(&four, FS).unwrap();
        let mut worst: f64 = 1.0;
        for ch in &four {
            let reference =
                theoretical_reference_state(&mt4.signal, ch, rabi, 4e6, 1).unwrap();
            let ideal = ideal_sequence_state(ch.gates(), &QubitState::ground());
            worst = worst.min(fidelity(&reference, &ideal));
        }
        assert!(worst < 1.0 - 1e-9, "interference must be visible: {worst}");
        assert!(worst > 0.9, "interference unreasonably large: {worst}");
    }

    #[test]
    fn identity_blocks_return_to_the_poles() {
        // undistorted gate blocks bring |0> back to |0> up to global phase
        let channels = build_gate_sequence(123, 1, 50, T).unwrap();
        for block in channels[0].gates().chunks(4) {
            let mut u = Unitary2::identity();
            for g in block {
                u = ideal_gate_unitary(g.kind).mul(&u);
            }
            let f = fidelity(&u.apply(&QubitState::ground()), &QubitState::ground());
            assert!(f > 1.0 - 1e-12, "block fidelity {f}");
        }
    }
}
