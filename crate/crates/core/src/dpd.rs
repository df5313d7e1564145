//! Memory-polynomial predistortion.
//!
//! The predistorter is `u(n) = sum_{k=1..K} sum_{l=0..L-1} a[k][l] *
//! x(n-l) |x(n-l)|^(k-1)`. Coefficients come from indirect learning: the
//! gain-normalized, time-aligned PA output is the regressor and the PA input
//! is the target, so the fitted post-inverse can be copied in front of the
//! device. The solve is blocked Householder QR with optional ridge.

use crate::error::{Error, Result};
use crate::linalg::{BlockLstsq, CONDITION_LIMIT, FALLBACK_CONDITION};
use crate::pulses::QubitChannel;
use crate::signal::{nmse_db, ComplexSignal};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Memory-polynomial structure: nonlinear orders `1..=K`, lags `0..L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpConfig {
    /// Highest nonlinear order K (counting k = 1..K).
    pub nonlinear_order: usize,
    /// Memory depth L (lags 0..L-1).
    pub memory_depth: usize,
    /// Ridge parameter; 0 requests a plain least-squares solve with an
    /// automatic trace-scaled fallback if the regressor is ill-conditioned.
    pub regularization: f64,
}

impl MpConfig {
    pub fn new(nonlinear_order: usize, memory_depth: usize) -> Self {
        Self {
            nonlinear_order,
            memory_depth,
            regularization: 0.0,
        }
    }

    pub fn n_coefficients(&self) -> usize {
        self.nonlinear_order * self.memory_depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.nonlinear_order == 0 || self.memory_depth == 0 {
            return Err(Error::Parameter(
                "memory polynomial needs K >= 1 and L >= 1".into(),
            ));
        }
        if self.regularization < 0.0 {
            return Err(Error::Parameter("regularization must be non-negative".into()));
        }
        Ok(())
    }

    /// Column index of order `k`, lag `l`: lag-major, order-minor.
    pub fn column_of(&self, k: usize, l: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.nonlinear_order && l < self.memory_depth);
        l * self.nonlinear_order + (k - 1)
    }
}

/// Complex coefficient grid `a[k][l]` of a memory polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct MpCoefficients {
    pub nonlinear_order: usize,
    pub memory_depth: usize,
    /// Lag-major, order-minor: entry `(k, l)` at `l * K + (k - 1)`.
    a: Vec<Complex64>,
}

impl MpCoefficients {
    pub fn new(config: &MpConfig, a: Vec<Complex64>) -> Result<Self> {
        config.validate()?;
        if a.len() != config.n_coefficients() {
            return Err(Error::Parameter(format!(
                "expected {} coefficients, got {}",
                config.n_coefficients(),
                a.len()
            )));
        }
        Ok(Self {
            nonlinear_order: config.nonlinear_order,
            memory_depth: config.memory_depth,
            a,
        })
    }

    /// The do-nothing predistorter: a[1][0] = 1, everything else 0.
    pub fn identity(config: &MpConfig) -> Self {
        let mut a = vec![Complex64::ZERO; config.n_coefficients()];
        a[config.column_of(1, 0)] = Complex64::new(1.0, 0.0);
        Self {
            nonlinear_order: config.nonlinear_order,
            memory_depth: config.memory_depth,
            a,
        }
    }

    pub fn at(&self, k: usize, l: usize) -> Complex64 {
        self.a[l * self.nonlinear_order + (k - 1)]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.a
    }

    /// CSV lines `k,l,re,im`, one per coefficient.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::with_capacity(self.a.len());
        for k in 1..=self.nonlinear_order {
            for l in 0..self.memory_depth {
                let c = self.at(k, l);
                rows.push(format!("{k},{l},{},{}", c.re, c.im));
            }
        }
        rows
    }
}

/// Basis value `z * |z|^(k-1)`.
#[inline]
fn mp_basis(z: Complex64, k: usize) -> Complex64 {
    let p = k as i32 - 1;
    let r2 = z.norm_sqr();
    let envelope = if p % 2 == 0 {
        r2.powi(p / 2)
    } else {
        r2.powi((p - 1) / 2) * r2.sqrt()
    };
    z * envelope
}

/// Memory-polynomial design matrix in column-major order; rows are samples,
/// columns follow [`MpConfig::column_of`].
#[derive(Debug, Clone)]
pub struct RegressorMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    data: Vec<Complex64>,
}

impl RegressorMatrix {
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.n_rows + row]
    }

    pub fn column(&self, col: usize) -> &[Complex64] {
        &self.data[col * self.n_rows..(col + 1) * self.n_rows]
    }
}

fn fill_regressor_block(
    x: &[Complex64],
    config: &MpConfig,
    row_start: usize,
    rows: usize,
    out: &mut [Complex64],
) {
    let k_max = config.nonlinear_order;
    for l in 0..config.memory_depth {
        for k in 1..=k_max {
            let col = config.column_of(k, l);
            let dst = &mut out[col * rows..(col + 1) * rows];
            for (r, d) in dst.iter_mut().enumerate() {
                let n = row_start + r;
                *d = if n >= l {
                    mp_basis(x[n - l], k)
                } else {
                    Complex64::ZERO // zero-padded history
                };
            }
        }
    }
}

/// Builds the full design matrix of `x` under `config`. History before the
/// first sample is zero-padded.
pub fn build_regressor(x: &ComplexSignal, config: &MpConfig) -> Result<RegressorMatrix> {
    config.validate()?;
    if x.len() <= config.memory_depth {
        return Err(Error::Parameter(format!(
            "signal of {} samples is shorter than memory depth {}",
            x.len(),
            config.memory_depth
        )));
    }
    let n_rows = x.len();
    let n_cols = config.n_coefficients();
    let mut data = vec![Complex64::ZERO; n_rows * n_cols];
    fill_regressor_block(x.samples(), config, 0, n_rows, &mut data);
    Ok(RegressorMatrix {
        n_rows,
        n_cols,
        data,
    })
}

/// Outcome of a post-inverse identification.
#[derive(Debug, Clone)]
pub struct Identification {
    pub coefficients: MpCoefficients,
    /// Mean squared residual of the fit, `||pa_in - Phi a||^2 / N`.
    pub residual_mse: f64,
    /// Diagonal condition estimate of the triangular factor.
    pub condition: f64,
    /// Ridge actually applied (user value or automatic fallback).
    pub ridge_used: f64,
}

const IDENT_BLOCK_ROWS: usize = 16_384;

/// Fits the PA post-inverse by indirect learning: regressor built on the
/// aligned, gain-normalized output, target is the PA input. Solves
/// `min_a ||pa_in - Phi(pa_out) a||^2` by blocked QR. If no ridge was
/// requested and the regressor is ill-conditioned (deep back-off drives the
/// high-order columns toward collinearity), a `1e-10 * trace` ridge is
/// applied automatically; a solve is rejected only if the triangle stays
/// unusable even then.
pub fn identify_postinverse(
    pa_in: &ComplexSignal,
    pa_out_aligned: &ComplexSignal,
    config: &MpConfig,
) -> Result<Identification> {
    config.validate()?;
    pa_in.check_compatible(pa_out_aligned)?;
    if pa_in.len() <= config.memory_depth {
        return Err(Error::Parameter(format!(
            "training span of {} samples is shorter than memory depth {}",
            pa_in.len(),
            config.memory_depth
        )));
    }

    let n_cols = config.n_coefficients();
    let mut solver = BlockLstsq::new(n_cols);
    let y = pa_out_aligned.samples();
    let x = pa_in.samples();
    let mut block = vec![Complex64::ZERO; IDENT_BLOCK_ROWS * n_cols];
    let mut start = 0;
    while start < y.len() {
        let rows = IDENT_BLOCK_ROWS.min(y.len() - start);
        fill_regressor_block(y, config, start, rows, &mut block[..rows * n_cols]);
        solver.push_block(&block[..rows * n_cols], &x[start..start + rows], rows);
        start += rows;
    }

    let mut ridge_used = config.regularization;
    if ridge_used > 0.0 {
        solver.push_ridge(ridge_used);
    }
    if solver.condition_estimate() > FALLBACK_CONDITION && config.regularization == 0.0 {
        ridge_used = 1e-10 * solver.trace();
        solver.push_ridge(ridge_used);
    }
    let condition = solver.condition_estimate();
    if condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { condition });
    }
    let solution = solver.solve()?;
    Ok(Identification {
        coefficients: MpCoefficients::new(
            &MpConfig {
                regularization: ridge_used,
                ..*config
            },
            solution.coefficients,
        )?,
        residual_mse: solution.residual_sq / solver.rows_seen() as f64,
        condition,
        ridge_used,
    })
}

/// Runs the memory polynomial over a signal with zero-padded history. Output
/// length equals input length.
pub fn apply_mp(x: &ComplexSignal, coeffs: &MpCoefficients) -> ComplexSignal {
    let samples = x.samples();
    let k_max = coeffs.nonlinear_order;
    let mut out = vec![Complex64::ZERO; samples.len()];
    for l in 0..coeffs.memory_depth {
        for k in 1..=k_max {
            let a = coeffs.at(k, l);
            if a == Complex64::ZERO {
                continue;
            }
            for (n, o) in out.iter_mut().enumerate().skip(l) {
                *o += a * mp_basis(samples[n - l], k);
            }
        }
    }
    ComplexSignal::new(out, x.sample_rate()).expect("same length as non-empty input")
}

/// Per-channel linearization quality of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMetrics {
    pub qubit_id: usize,
    /// Relative amplitude error of the tone over its driving pulses.
    pub delta_a: f64,
    /// Power at the channel's offset during its idle slots, relative to the
    /// channel's active-tone power, in dB (floored at -200).
    pub leakage_db: f64,
}

/// Waveform-level linearization metrics for an aligned, gain-normalized pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationMetrics {
    pub nmse_db: f64,
    pub per_channel: Vec<ChannelMetrics>,
}

/// Complex tone amplitude of `signal` at `freq` over a sample span, via a
/// single DFT bin. Spans covering whole pulses keep the other tones of the
/// 10-MHz-spaced grid exactly orthogonal.
fn tone_projection(
    signal: &ComplexSignal,
    freq: f64,
    span: (usize, usize),
) -> Complex64 {
    let (a, b) = (span.0, span.1.min(signal.len()));
    if b <= a {
        return Complex64::ZERO;
    }
    let step = -2.0 * std::f64::consts::PI * freq / signal.sample_rate();
    let mut acc = Complex64::ZERO;
    for i in a..b {
        acc += signal.samples()[i] * Complex64::from_polar(1.0, step * i as f64);
    }
    acc / (b - a) as f64
}

/// Computes NMSE, per-channel amplitude error over driving pulses, and
/// idle-slot leakage at each channel's offset.
pub fn linearization_metrics(
    reference: &ComplexSignal,
    output_aligned: &ComplexSignal,
    channels: &[QubitChannel],
) -> Result<LinearizationMetrics> {
    let nmse = nmse_db(reference, output_aligned)?;
    let fs = reference.sample_rate();
    let mut per_channel = Vec::with_capacity(channels.len());
    for ch in channels {
        let mut ratios = Vec::new();
        let mut active_power = 0.0;
        let mut n_active = 0usize;
        for span in ch.active_spans(fs) {
            let a_ref = tone_projection(reference, ch.freq_offset, span);
            let a_out = tone_projection(output_aligned, ch.freq_offset, span);
            if a_ref.norm() > 0.0 {
                ratios.push(a_out.norm() / a_ref.norm());
                active_power += a_out.norm_sqr();
                n_active += 1;
            }
        }
        let delta_a = if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64 - 1.0
        };
        let mut idle_power = 0.0;
        let mut n_idle = 0usize;
        for span in ch.idle_spans(fs) {
            idle_power += tone_projection(output_aligned, ch.freq_offset, span).norm_sqr();
            n_idle += 1;
        }
        let leakage_db = if n_idle == 0 || n_active == 0 || active_power == 0.0 {
            -200.0
        } else {
            let ratio = (idle_power / n_idle as f64) / (active_power / n_active as f64);
            if ratio < 1e-20 {
                -200.0
            } else {
                10.0 * ratio.log10()
            }
        };
        per_channel.push(ChannelMetrics {
            qubit_id: ch.qubit_id,
            delta_a,
            leakage_db,
        });
    }
    Ok(LinearizationMetrics {
        nmse_db: nmse,
        per_channel,
    })
}
