//! End-to-end harness: sequence runs and output-power sweeps over the
//! generate / predistort / amplify / align / evolve chain.
//!
//! A power level scales per-tone amplitude down and pulse duration up by the
//! same factor, so every pi-pulse stays a pi-pulse. The linear gain is
//! remeasured and the predistorter re-identified at every level; the raw arm
//! is normalized by the same per-level gain so its score reflects
//! nonlinearity and memory only. Both arms of a repetition share one PA noise
//! seed, which keeps their comparison paired.

use crate::dpd::{
    apply_mp, identify_postinverse, linearization_metrics, MpCoefficients, MpConfig,
};
use crate::error::{Error, Result};
use crate::mls::{generate_mls, prepend_preamble, MlsPreamble};
use crate::pa::{am_curves, apply_pa, measure_linear_gain, PaParams};
use crate::pulses::{assemble_multitone_if, build_gate_sequence, GateKind, QubitChannel};
use crate::qubit::{downconvert_channel, evolve, evolve_states, fidelity, BlochPoint, QubitState};
use crate::signal::ComplexSignal;
use crate::sync::{align_and_strip, estimate_alignment, SyncResult};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Sweep and repetition settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Seed for the evaluation gate sequences and all derived streams.
    pub rng_seed: u64,
    /// Identification span in four-pulse sequences.
    pub n_training_sequences: usize,
    /// Scoring span in four-pulse sequences.
    pub n_eval_sequences: usize,
    /// Output power levels in dB relative to full scale, ascending.
    pub power_levels_db: Vec<f64>,
    /// Noise-suppression repetitions per level.
    pub n_repetitions: usize,
}

/// Waveform construction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSettings {
    pub sample_rate_hz: f64,
    pub n_qubits: usize,
    /// Tone offsets from the IF center, Hz, one per qubit.
    pub tone_offsets_hz: Vec<f64>,
    /// Reference pulse duration, seconds.
    pub pulse_duration_s: f64,
    /// Per-tone digital amplitude of a pi-pulse at the reference level.
    pub tone_amplitude: f64,
    pub mls_order: u32,
    pub mls_samples_per_chip: usize,
    /// Preamble amplitude at the reference level; scales with the drive.
    pub mls_amplitude: f64,
}

/// Feedback alignment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSettings {
    pub upsample_factor: usize,
    pub peak_floor_db: f64,
}

/// Qubit evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitSettings {
    /// Two-sided passband of the per-qubit downconversion filter, Hz.
    pub downconversion_bandwidth_hz: f64,
    /// Evolution sub-steps per IF sample.
    pub substeps: usize,
}

/// Full experiment description; serializes to a sectioned TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: RunSettings,
    pub signal: SignalSettings,
    pub sync: SyncSettings,
    pub qubit: QubitSettings,
    pub dpd: MpConfig,
    pub pa: PaParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: RunSettings {
                rng_seed: DEFAULT_SEED,
                n_training_sequences: 50,
                n_eval_sequences: 20,
                power_levels_db: (0..=10).map(|i| -20.0 + 2.0 * i as f64).collect(),
                n_repetitions: 10,
            },
            signal: SignalSettings {
                sample_rate_hz: 250e6,
                n_qubits: 4,
                tone_offsets_hz: vec![20e6, 30e6, 40e6, 50e6],
                pulse_duration_s: 1.6e-6,
                tone_amplitude: 0.046,
                mls_order: 10,
                mls_samples_per_chip: 2,
                mls_amplitude: 0.5,
            },
            sync: SyncSettings {
                upsample_factor: 10,
                peak_floor_db: 6.0,
            },
            qubit: QubitSettings {
                downconversion_bandwidth_hz: 4e6,
                substeps: 1,
            },
            dpd: MpConfig::new(5, 6),
            pa: PaParams::default(),
        }
    }
}

/// Default sequence seed; chosen so qubit 0 runs the exemplary block
/// (idle, Y+, X-, idle) as its 15th of the default 20 evaluation sequences.
pub const DEFAULT_SEED: u64 = 11;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let e = |msg: String| Err(Error::Config(msg));
        let run = &self.experiment;
        if run.n_training_sequences == 0 || run.n_eval_sequences == 0 || run.n_repetitions == 0 {
            return e("sequence and repetition counts must be at least 1".into());
        }
        if run.power_levels_db.is_empty() {
            return e("need at least one power level".into());
        }
        if run.power_levels_db.windows(2).any(|w| w[1] <= w[0]) {
            return e("power levels must be strictly ascending".into());
        }
        let sig = &self.signal;
        if sig.n_qubits == 0 {
            return e("need at least one qubit".into());
        }
        if sig.tone_offsets_hz.len() != sig.n_qubits {
            return e(format!(
                "{} tone offsets for {} qubits",
                sig.tone_offsets_hz.len(),
                sig.n_qubits
            ));
        }
        if !(sig.sample_rate_hz > 0.0) {
            return e("sample rate must be positive".into());
        }
        let pulse_samples = sig.pulse_duration_s * sig.sample_rate_hz;
        if (pulse_samples - pulse_samples.round()).abs() > 1e-6 {
            return e(format!(
                "pulse duration of {pulse_samples} samples does not sit on the sample grid"
            ));
        }
        if pulse_samples.round() < 2.0 {
            return e("pulse duration shorter than two samples".into());
        }
        if !(sig.tone_amplitude > 0.0) {
            return e("tone amplitude must be positive".into());
        }
        if sig.mls_samples_per_chip == 0 {
            return e("mls_samples_per_chip must be at least 1".into());
        }
        if self.sync.upsample_factor == 0 {
            return e("sync upsample factor must be at least 1".into());
        }
        if self.qubit.substeps == 0 {
            return e("substeps must be at least 1".into());
        }
        self.dpd.validate()?;
        self.pa.validate()?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// seed streams
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derivation for independent sub-streams.
fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for t in tags {
        s = splitmix64(s ^ t.wrapping_mul(0xA24B_AED4_963E_E407));
    }
    s
}

const TAG_TRAINING_SEQ: u64 = 1;
const TAG_PA_TRAIN: u64 = 2;
const TAG_PA_GAIN: u64 = 3;
const TAG_PA_REP: u64 = 4;

// ---------------------------------------------------------------------------
// report types
// ---------------------------------------------------------------------------

/// The two evaluation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Raw,
    Dpd,
}

impl Arm {
    pub fn label(&self) -> &'static str {
        match self {
            Arm::Raw => "raw",
            Arm::Dpd => "dpd",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which arms to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArmSelection {
    #[default]
    Both,
    RawOnly,
    DpdOnly,
}

impl ArmSelection {
    fn arms(&self) -> &'static [Arm] {
        match self {
            ArmSelection::Both => &[Arm::Raw, Arm::Dpd],
            ArmSelection::RawOnly => &[Arm::Raw],
            ArmSelection::DpdOnly => &[Arm::Dpd],
        }
    }

    fn wants_dpd(&self) -> bool {
        !matches!(self, ArmSelection::RawOnly)
    }
}

/// One aggregated sweep data row. Infidelity is averaged over repetitions;
/// the waveform metrics come from the coherently averaged capture of the
/// repetitions, which suppresses the measurement-noise floor.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub qubit_id: usize,
    pub power_db: f64,
    pub arm: Arm,
    pub mean_infidelity: f64,
    /// Standard error of the reported mean over repetitions.
    pub std_infidelity: f64,
    pub nmse_db: f64,
    pub delta_a: f64,
    pub leakage_db: f64,
}

/// Per-evaluation metrics row (one per level, arm, repetition, qubit).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub power_db: f64,
    pub arm: Arm,
    pub repetition: usize,
    pub qubit_id: usize,
    pub nmse_db: f64,
    pub delta_a: f64,
    pub leakage_db: f64,
}

/// Alignment log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncLogRow {
    pub power_db: f64,
    pub arm: Arm,
    pub repetition: usize,
    pub sync: SyncResult,
}

/// Full power-sweep outcome.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
    pub metrics_log: Vec<MetricsRow>,
    pub sync_log: Vec<SyncLogRow>,
    /// Re-identified predistorter per level.
    pub coefficients: Vec<(f64, MpCoefficients)>,
}

/// Per-sequence fidelity entry of a sequence experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub arm: Arm,
    pub qubit_id: usize,
    pub sequence_index: usize,
    pub fidelity: f64,
}

/// A Bloch trajectory for export.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// "raw", "dpd", or "reference".
    pub arm_label: &'static str,
    pub qubit_id: usize,
    pub sample_rate: f64,
    pub points: Vec<BlochPoint>,
}

/// Outcome of a single-level sequence experiment.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub config: ExperimentConfig,
    pub power_db: f64,
    pub fidelities: Vec<FidelityRow>,
    pub trajectories: Vec<Trajectory>,
    pub metrics_log: Vec<MetricsRow>,
    pub sync_log: Vec<SyncLogRow>,
    pub coefficients: Option<MpCoefficients>,
    pub x_if: ComplexSignal,
    pub y_raw_aligned: Option<ComplexSignal>,
    pub y_dpd_aligned: Option<ComplexSignal>,
}

// ---------------------------------------------------------------------------
// level plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct LevelPlan {
    power_db: f64,
    /// Exact amplitude factor relative to the reference level.
    amp_scale: f64,
    dur_scale: f64,
    pulse_samples: usize,
    /// Effective Rabi rate of the calibrated unit-amplitude baseband.
    rabi: f64,
}

fn plan_level(cfg: &ExperimentConfig, power_db: f64) -> Result<LevelPlan> {
    let sig = &cfg.signal;
    let t_ref = sig.pulse_duration_s;
    let fs = sig.sample_rate_hz;
    let stretch = 10f64.powf(-power_db / 20.0);
    let pulse_samples = (t_ref * stretch * fs).round() as usize;
    if pulse_samples < 2 {
        return Err(Error::Resolution(format!(
            "power level {power_db} dB shrinks pulses below two samples"
        )));
    }
    let pulse_duration = pulse_samples as f64 / fs;
    let dur_scale = pulse_duration / t_ref;
    Ok(LevelPlan {
        power_db,
        // amp * dur == 1 exactly, so rotation angles survive grid rounding
        amp_scale: 1.0 / dur_scale,
        dur_scale,
        pulse_samples,
        rabi: std::f64::consts::PI / pulse_duration,
    })
}

fn scale_channels(
    base: &[QubitChannel],
    offsets: &[f64],
    amp: f64,
    dur: f64,
) -> Result<Vec<QubitChannel>> {
    base.iter()
        .zip(offsets)
        .map(|(ch, f)| Ok(ch.scaled(amp, dur)?.with_freq_offset(*f)))
        .collect()
}

fn boundary_marks(n_sequences: usize, pulse_samples: usize) -> Vec<usize> {
    (1..=n_sequences).map(|i| i * 4 * pulse_samples).collect()
}

/// Everything one repetition produces.
struct RepOutcome {
    repetition: usize,
    arm: Arm,
    sync: SyncResult,
    /// Per qubit: per-sequence infidelities against the reference states.
    infidelities: Vec<Vec<f64>>,
    /// Per qubit: (nmse_db, delta_a, leakage_db) of this single capture.
    metrics: Vec<(f64, f64, f64)>,
    /// Aligned, gain-normalized capture, kept for coherent averaging.
    fair: ComplexSignal,
}

struct LevelContext<'a> {
    cfg: &'a ExperimentConfig,
    plan: LevelPlan,
    eval_channels: Vec<QubitChannel>,
    eval_if: ComplexSignal,
    dpd_if: Option<ComplexSignal>,
    preamble: MlsPreamble,
    preamble_amp: f64,
    level_gain: Complex64,
    reference_states: Vec<Vec<QubitState>>,
    marks: Vec<usize>,
    identification: Option<crate::dpd::Identification>,
}

fn prepare_level<'a>(
    cfg: &'a ExperimentConfig,
    plan: LevelPlan,
    train_base: &[QubitChannel],
    eval_base: &[QubitChannel],
    level_idx: usize,
    arms: ArmSelection,
) -> Result<LevelContext<'a>> {
    let sig = &cfg.signal;
    let amp = sig.tone_amplitude * plan.amp_scale;
    let train_channels = scale_channels(train_base, &sig.tone_offsets_hz, amp, plan.dur_scale)?;
    let eval_channels = scale_channels(eval_base, &sig.tone_offsets_hz, amp, plan.dur_scale)?;
    let train_if = assemble_multitone_if(&train_channels, sig.sample_rate_hz)?;
    let eval_if = assemble_multitone_if(&eval_channels, sig.sample_rate_hz)?;

    let preamble = generate_mls(sig.mls_order, 1)?
        .with_samples_per_chip(sig.mls_samples_per_chip)?;
    let preamble_amp = sig.mls_amplitude * plan.amp_scale;
    let preamble_len = preamble.sample_len();

    let seed = cfg.experiment.rng_seed;
    // the per-level linear gain, remeasured at this drive
    let gain_pa = cfg
        .pa
        .clone()
        .with_seed(mix_seed(cfg.pa.rng_seed, &[TAG_PA_GAIN, seed, level_idx as u64]));
    let level_gain = measure_linear_gain(&gain_pa, &train_if.signal)?;

    let identification = if arms.wants_dpd() {
        let tx = prepend_preamble(&train_if.signal, &preamble, preamble_amp);
        let train_pa = cfg
            .pa
            .clone()
            .with_seed(mix_seed(cfg.pa.rng_seed, &[TAG_PA_TRAIN, seed, level_idx as u64]));
        let y = apply_pa(&train_pa, &tx)?;
        let sync = estimate_alignment(
            &tx,
            &y,
            cfg.sync.upsample_factor,
            preamble_len,
            cfg.sync.peak_floor_db,
        )?;
        let aligned = align_and_strip(&y, &sync, preamble_len)?;
        let normalized = aligned.scaled(sync.complex_gain / level_gain);
        Some(identify_postinverse(&train_if.signal, &normalized, &cfg.dpd)?)
    } else {
        None
    };
    let dpd_if = identification
        .as_ref()
        .map(|ident| apply_mp(&eval_if.signal, &ident.coefficients));

    // noise-free reference states per qubit at the sequence boundaries
    let marks = boundary_marks(cfg.experiment.n_eval_sequences, plan.pulse_samples);
    let reference_states = eval_channels
        .iter()
        .map(|ch| {
            let bb = downconvert_channel(
                &eval_if.signal,
                ch.freq_offset,
                cfg.qubit.downconversion_bandwidth_hz,
            )?;
            let (_, states) = evolve_states(
                &bb,
                plan.rabi,
                cfg.qubit.substeps,
                &QubitState::ground(),
                &marks,
            )?;
            Ok(states)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LevelContext {
        cfg,
        plan,
        eval_channels,
        eval_if: eval_if.signal,
        dpd_if,
        preamble,
        preamble_amp,
        level_gain,
        reference_states,
        marks,
        identification,
    })
}

fn run_repetition(ctx: &LevelContext<'_>, repetition: usize, arm: Arm) -> Result<RepOutcome> {
    let cfg = ctx.cfg;
    let signal = match arm {
        Arm::Raw => &ctx.eval_if,
        Arm::Dpd => ctx
            .dpd_if
            .as_ref()
            .ok_or_else(|| Error::Parameter("DPD arm requested without identification".into()))?,
    };
    let tx = prepend_preamble(signal, &ctx.preamble, ctx.preamble_amp);
    // both arms of a repetition share one noise seed: paired comparison
    let pa = cfg.pa.clone().with_seed(mix_seed(
        cfg.pa.rng_seed,
        &[
            TAG_PA_REP,
            cfg.experiment.rng_seed,
            (ctx.plan.power_db.to_bits() as u64) ^ repetition as u64,
        ],
    ));
    let y = apply_pa(&pa, &tx)?;
    let preamble_len = ctx.preamble.sample_len();
    let sync = estimate_alignment(
        &tx,
        &y,
        cfg.sync.upsample_factor,
        preamble_len,
        cfg.sync.peak_floor_db,
    )?;
    let aligned = align_and_strip(&y, &sync, preamble_len)?;
    let fair = aligned.scaled(sync.complex_gain / ctx.level_gain);

    let metrics = linearization_metrics(&ctx.eval_if, &fair, &ctx.eval_channels)?;
    let mut per_qubit_metrics = Vec::with_capacity(ctx.eval_channels.len());
    for ch in &metrics.per_channel {
        per_qubit_metrics.push((metrics.nmse_db, ch.delta_a, ch.leakage_db));
    }

    let mut infidelities = Vec::with_capacity(ctx.eval_channels.len());
    for (ch, refs) in ctx.eval_channels.iter().zip(&ctx.reference_states) {
        let bb = downconvert_channel(
            &fair,
            ch.freq_offset,
            cfg.qubit.downconversion_bandwidth_hz,
        )?;
        let (_, states) = evolve_states(
            &bb,
            ctx.plan.rabi,
            cfg.qubit.substeps,
            &QubitState::ground(),
            &ctx.marks,
        )?;
        infidelities.push(
            states
                .iter()
                .zip(refs)
                .map(|(s, r)| 1.0 - fidelity(s, r))
                .collect(),
        );
    }
    Ok(RepOutcome {
        repetition,
        arm,
        sync,
        infidelities,
        metrics: per_qubit_metrics,
        fair,
    })
}

fn aggregate_level(
    ctx: &LevelContext<'_>,
    outcomes: &[RepOutcome],
    rows: &mut Vec<SweepRow>,
    metrics_log: &mut Vec<MetricsRow>,
    sync_log: &mut Vec<SyncLogRow>,
) {
    let cfg = ctx.cfg;
    let power_db = ctx.plan.power_db;
    for o in outcomes {
        sync_log.push(SyncLogRow {
            power_db,
            arm: o.arm,
            repetition: o.repetition,
            sync: o.sync,
        });
        for (q, m) in o.metrics.iter().enumerate() {
            metrics_log.push(MetricsRow {
                power_db,
                arm: o.arm,
                repetition: o.repetition,
                qubit_id: q,
                nmse_db: m.0,
                delta_a: m.1,
                leakage_db: m.2,
            });
        }
    }
    for arm in [Arm::Raw, Arm::Dpd] {
        let of_arm: Vec<&RepOutcome> = outcomes.iter().filter(|o| o.arm == arm).collect();
        if of_arm.is_empty() {
            continue;
        }
        // waveform metrics on the coherent repetition average: the captures
        // share one deterministic part, so averaging suppresses the noise
        // floor the way the repetitions are meant to
        let mut mean_samples = vec![Complex64::ZERO; ctx.eval_if.len()];
        for o in &of_arm {
            for (m, s) in mean_samples.iter_mut().zip(o.fair.samples()) {
                *m += s;
            }
        }
        let scale = 1.0 / of_arm.len() as f64;
        for m in &mut mean_samples {
            *m *= scale;
        }
        let mean_fair = ComplexSignal::new(mean_samples, ctx.eval_if.sample_rate())
            .expect("non-empty capture");
        let avg_metrics = linearization_metrics(&ctx.eval_if, &mean_fair, &ctx.eval_channels)
            .expect("compatible by construction");

        for q in 0..cfg.signal.n_qubits {
            let rep_means: Vec<f64> = of_arm
                .iter()
                .map(|o| {
                    let v = &o.infidelities[q];
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            let n = rep_means.len() as f64;
            let mean = rep_means.iter().sum::<f64>() / n;
            let std = if rep_means.len() > 1 {
                let var =
                    rep_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                qubit_id: q,
                power_db,
                arm,
                mean_infidelity: mean,
                std_infidelity: std,
                nmse_db: avg_metrics.nmse_db,
                delta_a: avg_metrics.per_channel[q].delta_a,
                leakage_db: avg_metrics.per_channel[q].leakage_db,
            });
        }
    }
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

fn base_channels(cfg: &ExperimentConfig) -> Result<(Vec<QubitChannel>, Vec<QubitChannel>)> {
    let sig = &cfg.signal;
    let eval = build_gate_sequence(
        cfg.experiment.rng_seed,
        sig.n_qubits,
        cfg.experiment.n_eval_sequences,
        sig.pulse_duration_s,
    )?;
    let train = build_gate_sequence(
        mix_seed(cfg.experiment.rng_seed, &[TAG_TRAINING_SEQ]),
        sig.n_qubits,
        cfg.experiment.n_training_sequences,
        sig.pulse_duration_s,
    )?;
    Ok((train, eval))
}

/// Runs the full output-power study: per level, remeasure the linear gain,
/// re-identify the predistorter, evaluate both arms over all repetitions, and
/// aggregate mean infidelity and waveform metrics per qubit.
pub fn run_power_sweep(cfg: &ExperimentConfig, arms: ArmSelection) -> Result<SweepReport> {
    cfg.validate()?;
    let (train_base, eval_base) = base_channels(cfg)?;
    let mut rows = Vec::new();
    let mut metrics_log = Vec::new();
    let mut sync_log = Vec::new();
    let mut coefficients = Vec::new();

    for (level_idx, &power_db) in cfg.experiment.power_levels_db.iter().enumerate() {
        let plan = plan_level(cfg, power_db)?;
        let ctx = prepare_level(cfg, plan, &train_base, &eval_base, level_idx, arms)?;
        if let Some(ident) = &ctx.identification {
            coefficients.push((power_db, ident.coefficients.clone()));
        }
        let jobs: Vec<(usize, Arm)> = (0..cfg.experiment.n_repetitions)
            .flat_map(|rep| arms.arms().iter().map(move |arm| (rep, *arm)))
            .collect();
        let outcomes: Vec<RepOutcome> = jobs
            .par_iter()
            .map(|(rep, arm)| run_repetition(&ctx, *rep, *arm))
            .collect::<Result<_>>()?;
        aggregate_level(&ctx, &outcomes, &mut rows, &mut metrics_log, &mut sync_log);
    }
    Ok(SweepReport {
        config: cfg.clone(),
        rows,
        metrics_log,
        sync_log,
        coefficients,
    })
}

/// Runs one power level (the highest configured) end to end and collects the
/// per-sequence fidelity table plus full Bloch trajectories for every qubit:
/// measured raw arm, measured DPD arm, and the noise-free reference.
pub fn run_sequence_experiment(
    cfg: &ExperimentConfig,
    arms: ArmSelection,
) -> Result<SequenceRun> {
    cfg.validate()?;
    let (train_base, eval_base) = base_channels(cfg)?;
    let power_db = *cfg
        .experiment
        .power_levels_db
        .last()
        .expect("validated non-empty");
    let level_idx = cfg.experiment.power_levels_db.len() - 1;
    let plan = plan_level(cfg, power_db)?;
    let ctx = prepare_level(cfg, plan, &train_base, &eval_base, level_idx, arms)?;

    let mut fidelities = Vec::new();
    let mut trajectories = Vec::new();
    let mut metrics_log = Vec::new();
    let mut sync_log = Vec::new();
    let mut y_raw_aligned = None;
    let mut y_dpd_aligned = None;

    // reference trajectories from the undistorted transmit signal
    for ch in &ctx.eval_channels {
        let bb = downconvert_channel(
            &ctx.eval_if,
            ch.freq_offset,
            cfg.qubit.downconversion_bandwidth_hz,
        )?;
        let ev = evolve(&bb, plan.rabi, cfg.qubit.substeps, &QubitState::ground())?;
        trajectories.push(Trajectory {
            arm_label: "reference",
            qubit_id: ch.qubit_id,
            sample_rate: cfg.signal.sample_rate_hz,
            points: ev.trajectory,
        });
    }

    for &arm in arms.arms() {
        let signal = match arm {
            Arm::Raw => &ctx.eval_if,
            Arm::Dpd => ctx.dpd_if.as_ref().expect("dpd arm prepared"),
        };
        let tx = prepend_preamble(signal, &ctx.preamble, ctx.preamble_amp);
        let pa = cfg.pa.clone().with_seed(mix_seed(
            cfg.pa.rng_seed,
            &[TAG_PA_REP, cfg.experiment.rng_seed, plan.power_db.to_bits() as u64],
        ));
        let y = apply_pa(&pa, &tx)?;
        let preamble_len = ctx.preamble.sample_len();
        let sync = estimate_alignment(
            &tx,
            &y,
            cfg.sync.upsample_factor,
            preamble_len,
            cfg.sync.peak_floor_db,
        )?;
        let aligned = align_and_strip(&y, &sync, preamble_len)?;
        let fair = aligned.scaled(sync.complex_gain / ctx.level_gain);
        sync_log.push(SyncLogRow {
            power_db,
            arm,
            repetition: 0,
            sync,
        });

        let metrics = linearization_metrics(&ctx.eval_if, &fair, &ctx.eval_channels)?;
        for ch in &metrics.per_channel {
            metrics_log.push(MetricsRow {
                power_db,
                arm,
                repetition: 0,
                qubit_id: ch.qubit_id,
                nmse_db: metrics.nmse_db,
                delta_a: ch.delta_a,
                leakage_db: ch.leakage_db,
            });
        }

        for (ch, refs) in ctx.eval_channels.iter().zip(&ctx.reference_states) {
            let bb = downconvert_channel(
                &fair,
                ch.freq_offset,
                cfg.qubit.downconversion_bandwidth_hz,
            )?;
            let ev = evolve(&bb, plan.rabi, cfg.qubit.substeps, &QubitState::ground())?;
            // boundary fidelities against the reference states
            let (_, states) = evolve_states(
                &bb,
                plan.rabi,
                cfg.qubit.substeps,
                &QubitState::ground(),
                &ctx.marks,
            )?;
            for (i, (s, r)) in states.iter().zip(refs).enumerate() {
                fidelities.push(FidelityRow {
                    arm,
                    qubit_id: ch.qubit_id,
                    sequence_index: i,
                    fidelity: fidelity(s, r),
                });
            }
            trajectories.push(Trajectory {
                arm_label: arm.label(),
                qubit_id: ch.qubit_id,
                sample_rate: cfg.signal.sample_rate_hz,
                points: ev.trajectory,
            });
        }
        match arm {
            Arm::Raw => y_raw_aligned = Some(fair),
            Arm::Dpd => y_dpd_aligned = Some(fair),
        }
    }

    Ok(SequenceRun {
        config: cfg.clone(),
        power_db,
        fidelities,
        trajectories,
        metrics_log,
        sync_log,
        coefficients: ctx.identification.map(|i| i.coefficients),
        x_if: ctx.eval_if,
        y_raw_aligned,
        y_dpd_aligned,
    })
}

/// Searches seeds until some qubit's gate train contains the four-slot block
/// `pattern`. Returns `(seed, qubit_id, sequence_index)`.
pub fn find_seed_for_block(
    pattern: [GateKind; 4],
    n_qubits: usize,
    n_sequences: usize,
    max_seeds: u64,
) -> Option<(u64, usize, usize)> {
    for seed in 0..max_seeds {
        let channels = build_gate_sequence(seed, n_qubits, n_sequences, 1.6e-6).ok()?;
        for ch in &channels {
            for (i, block) in ch.gates().chunks(4).enumerate() {
                if block.iter().map(|g| g.kind).eq(pattern.iter().copied()) {
                    return Some((seed, ch.qubit_id, i));
                }
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn manifest_toml(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!(
        "generator = \"dpdsim {}\"\nseed = {}\n\n",
        env!("CARGO_PKG_VERSION"),
        cfg.experiment.rng_seed
    ));
    out.push_str(&cfg.to_toml_string()?);
    Ok(out)
}

fn am_curves_csv(pa: &PaParams) -> Result<String> {
    let mut out = String::from("a_in,a_out,phase_deg\n");
    for p in am_curves(pa, 201)? {
        out.push_str(&format!("{},{},{}\n", p.a_in, p.a_out, p.phase_deg));
    }
    Ok(out)
}

fn coefficients_csv(coeffs: &MpCoefficients) -> String {
    let mut out = String::from("k,l,re,im\n");
    for row in coeffs.csv_rows() {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Writes the sweep CSVs, per-level coefficient dumps, the AM characterization
/// of the configured PA, and a reproducibility manifest. Returns the paths
/// written.
pub fn emit_sweep_reports(report: &SweepReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut sweep = String::from(
        "qubit,power_db,arm,mean_infidelity,std,nmse_db,delta_a,leakage_db\n",
    );
    for r in &report.rows {
        sweep.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.qubit_id,
            r.power_db,
            r.arm,
            r.mean_infidelity,
            r.std_infidelity,
            r.nmse_db,
            r.delta_a,
            r.leakage_db
        ));
    }
    let path = dir.join("sweep.csv");
    write_file(&path, &sweep)?;
    written.push(path);

    let mut metrics = String::from("power_db,arm,repetition,qubit,nmse_db,delta_a,leakage_db\n");
    for m in &report.metrics_log {
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.power_db, m.arm, m.repetition, m.qubit_id, m.nmse_db, m.delta_a, m.leakage_db
        ));
    }
    let path = dir.join("metrics.csv");
    write_file(&path, &metrics)?;
    written.push(path);

    let mut sync = String::from("power_db,arm,repetition,delay,gain_re,gain_im,peak_db\n");
    for s in &report.sync_log {
        sync.push_str(&format!(
            "{},{},{},{}\n",
            s.power_db,
            s.arm,
            s.repetition,
            s.sync.csv_row()
        ));
    }
    let path = dir.join("sync_log.csv");
    write_file(&path, &sync)?;
    written.push(path);

    for (i, (power_db, coeffs)) in report.coefficients.iter().enumerate() {
        let path = dir.join(format!("dpd_coefficients_l{i:02}_{power_db}dB.csv"));
        write_file(&path, &coefficients_csv(coeffs))?;
        written.push(path);
    }

    let path = dir.join("am_curves.csv");
    write_file(&path, &am_curves_csv(&report.config.pa)?)?;
    written.push(path);

    let path = dir.join("manifest.toml");
    write_file(&path, &manifest_toml(&report.config)?)?;
    written.push(path);
    Ok(written)
}

/// Writes per-sequence fidelity tables, Bloch trajectories, aligned signal
/// containers, DPD coefficients, and the manifest for a sequence run.
pub fn emit_sequence_reports(
    run: &SequenceRun,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    for arm in [Arm::Raw, Arm::Dpd] {
        let rows: Vec<&FidelityRow> = run.fidelities.iter().filter(|r| r.arm == arm).collect();
        if rows.is_empty() {
            continue;
        }
        let mut csv = String::from("qubit_id,sequence_index,F\n");
        for r in rows {
            csv.push_str(&format!("{},{},{}\n", r.qubit_id, r.sequence_index, r.fidelity));
        }
        let path = dir.join(format!("fidelity_{arm}.csv"));
        write_file(&path, &csv)?;
        written.push(path);
    }

    for t in &run.trajectories {
        let mut csv = String::from("t,x,y,z\n");
        for (i, p) in t.points.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                i as f64 / t.sample_rate,
                p.x,
                p.y,
                p.z
            ));
        }
        let path = dir.join(format!("trajectory_q{}_{}.csv", t.qubit_id, t.arm_label));
        write_file(&path, &csv)?;
        written.push(path);
    }

    let path = dir.join("x_if.bin");
    crate::io::write_signal_bin(&path, &run.x_if)?;
    written.push(path);
    if let Some(y) = &run.y_raw_aligned {
        let path = dir.join("y_raw.bin");
        crate::io::write_signal_bin(&path, y)?;
        written.push(path);
    }
    if let Some(y) = &run.y_dpd_aligned {
        let path = dir.join("y_dpd.bin");
        crate::io::write_signal_bin(&path, y)?;
        written.push(path);
    }

    if let Some(coeffs) = &run.coefficients {
        let path = dir.join("dpd_coefficients.csv");
        write_file(&path, &coefficients_csv(coeffs))?;
        written.push(path);
    }

    let mut metrics = String::from("power_db,arm,repetition,qubit,nmse_db,delta_a,leakage_db\n");
    for m in &run.metrics_log {
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.power_db, m.arm, m.repetition, m.qubit_id, m.nmse_db, m.delta_a, m.leakage_db
        ));
    }
    let path = dir.join("metrics.csv");
    write_file(&path, &metrics)?;
    written.push(path);

    let path = dir.join("am_curves.csv");
    write_file(&path, &am_curves_csv(&run.config.pa)?)?;
    written.push(path);

    let path = dir.join("manifest.toml");
    write_file(&path, &manifest_toml(&run.config)?)?;
    written.push(path);
    Ok(written)
}
