//! High-dimensional time-bin entanglement and its analysis with delayed
//! Mach–Zehnder interferometers.
//!
//! The source state is `Σ_k |k⟩_s|k⟩_i` over `M` slots. An interferometer whose
//! arm delay is `s` slots maps `|k⟩ → (|k⟩ + e^{iφ}|k+s⟩)/2` on one output
//! port. After both arms, a signal/idler coincidence in the same output slot
//! `j` collects the short–short amplitude from emission `j` and the long–long
//! amplitude from emission `j − s`. Their interference gives fringes in
//! `φs + φi`. The first and last `s` output slots have only one contributing
//! path and do not interfere.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::detection::DetectorParams;
use crate::error::{Error, Result};
use crate::pair_source::{analytic_g2, SourceParams};
use crate::seeding::{chunk_rng, chunks, derive_key};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimeBinState {
    /// Number of mutually coherent slots `M`.
    pub slots: usize,
    /// seconds
    pub slot_interval: f64,
}

impl TimeBinState {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::InvalidParams("time-bin state needs M ≥ 2".into()));
        }
        if !(self.slot_interval > 0.0) {
            return Err(Error::InvalidParams("slot_interval must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InterferometerParams {
    /// Arm propagation-time difference, seconds.
    pub arm_delay: f64,
    /// Phase at `reference_temperature`, rad.
    pub phase: f64,
    /// dφ/dT, rad/°C.
    pub temperature_coefficient: f64,
    /// °C
    pub reference_temperature: f64,
}

impl InterferometerParams {
    pub fn phase_at(&self, temperature_c: f64) -> f64 {
        self.phase + self.temperature_coefficient * (temperature_c - self.reference_temperature)
    }

    /// Arm delay in slots; must be a positive integer.
    pub fn slot_shift(&self, slot_interval: f64) -> Result<usize> {
        let ratio = self.arm_delay / slot_interval;
        let rounded = ratio.round();
        if !(rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * rounded) {
            return Err(Error::NonIntegerShift {
                arm_delay: self.arm_delay,
                slot_interval,
            });
        }
        Ok(rounded as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Signal,
    Idler,
}

/// Sparse two-photon amplitudes keyed by (signal slot, idler slot), 1-based.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoPhotonAmplitudes {
    pub terms: BTreeMap<(usize, usize), Complex64>,
}

impl TwoPhotonAmplitudes {
    /// `(1/√M) Σ_{k=1}^{M} |k⟩_s|k⟩_i`
    pub fn entangled(state: &TimeBinState) -> Self {
        let a = Complex64::new(1.0 / (state.slots as f64).sqrt(), 0.0);
        Self {
            terms: (1..=state.slots).map(|k| ((k, k), a)).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn get(&self, signal_slot: usize, idler_slot: usize) -> Complex64 {
        self.terms.get(&(signal_slot, idler_slot)).copied().unwrap_or_default()
    }

    /// Same-slot (coincidence-relevant) amplitudes in slot order.
    pub fn coincident(&self) -> Vec<(usize, Complex64)> {
        self.terms
            .iter()
            .filter(|((s, i), _)| s == i)
            .map(|(&(s, _), &a)| (s, a))
            .collect()
    }
}

/// Applies the `|k⟩ → (|k⟩ + e^{iφ}|k+s⟩)/2` map to one arm.
pub fn apply_mzi(
    amplitudes: &TwoPhotonAmplitudes,
    params: &InterferometerParams,
    phase: f64,
    slot_interval: f64,
    arm: Arm,
) -> Result<TwoPhotonAmplitudes> {
    let shift = params.slot_shift(slot_interval)?;
    let half = Complex64::new(0.5, 0.0);
    let long = Complex64::from_polar(0.5, phase);
    let mut out = TwoPhotonAmplitudes::default();
    for (&(s, i), &a) in &amplitudes.terms {
        let (short_key, long_key) = match arm {
            Arm::Signal => ((s, i), (s + shift, i)),
            Arm::Idler => ((s, i), (s, i + shift)),
        };
        *out.terms.entry(short_key).or_default() += a * half;
        *out.terms.entry(long_key).or_default() += a * long;
    }
    Ok(out)
}

/// `1 + V·cos(φs + φi)`; mean 1 over a fringe period.
pub fn coincidence_probability(phi_s: f64, phi_i: f64, visibility: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::InvalidVisibility(visibility));
    }
    Ok(1.0 + visibility * (phi_s + phi_i).cos())
}

/// Per-output-slot weights of the two-interferometer measurement, in units of
/// the per-slot photon means.
#[derive(Debug, Clone)]
pub struct SlotWeights {
    /// Fraction of one emission slot's signal photons reaching output slot `j`.
    pub signal: Vec<f64>,
    pub idler: Vec<f64>,
    /// Pair weight `|A_j|²` with the cross term scaled by the coherence factor.
    pub pair: Vec<f64>,
}

/// Computes output-slot weights for signal/idler interferometer phases, with
/// the short–long cross term scaled by `coherence` (1 = ideal).
pub fn slot_weights(
    state: &TimeBinState,
    signal_mzi: &InterferometerParams,
    idler_mzi: &InterferometerParams,
    phi_s: f64,
    phi_i: f64,
    coherence: f64,
) -> Result<SlotWeights> {
    state.validate()?;
    let ss = signal_mzi.slot_shift(state.slot_interval)?;
    let si = idler_mzi.slot_shift(state.slot_interval)?;
    let n = state.slots + ss.max(si) + 1;
    let mut signal = vec![0.0; n];
    let mut idler = vec![0.0; n];
    for k in 1..=state.slots {
        signal[k] += 0.25;
        signal[k + ss] += 0.25;
        idler[k] += 0.25;
        idler[k + si] += 0.25;
    }
    // Unit pair amplitude per emission slot; coherent and incoherent sums.
    let unit = TwoPhotonAmplitudes {
        terms: (1..=state.slots).map(|k| ((k, k), Complex64::new(1.0, 0.0))).collect(),
    };
    let after = apply_mzi(&unit, signal_mzi, phi_s, state.slot_interval, Arm::Signal)?;
    let after = apply_mzi(&after, idler_mzi, phi_i, state.slot_interval, Arm::Idler)?;
    let mut pair = vec![0.0; n];
    for (j, a) in after.coincident() {
        pair[j] = a.norm_sqr();
    }
    if coherence != 1.0 {
        // Incoherent sum: each emission slot contributes |a_s·a_i|² = 1/16 to
        // every same-slot output it reaches.
        let mut incoherent = vec![0.0; n];
        for k in 1..=state.slots {
            incoherent[k] += 1.0 / 16.0;
            if ss == si {
                incoherent[k + ss] += 1.0 / 16.0;
            }
        }
        for j in 0..n {
            pair[j] = incoherent[j] + coherence * (pair[j] - incoherent[j]);
        }
    }
    Ok(SlotWeights { signal, idler, pair })
}

/// Relative coincidence rate summed over all output slots, in the
/// low-detection limit: `Σ_j [w_s(j)·w_i(j) + (g² − 1)·|A_j|²]`.
fn total_coincidence(weights: &SlotWeights, g2: f64) -> f64 {
    weights
        .signal
        .iter()
        .zip(&weights.idler)
        .zip(&weights.pair)
        .map(|((ws, wi), p)| ws * wi + (g2 - 1.0) * p)
        .sum()
}

/// Fringe visibility for the modelled state and source, including accidental
/// coincidences (multi-pair and noise photons, via the source's g²) and the
/// non-interfering boundary slots.
pub fn ideal_visibility(state: &TimeBinState, source: &SourceParams) -> Result<f64> {
    let g2 = analytic_g2(source)?;
    let mzi = InterferometerParams {
        arm_delay: 2.0 * state.slot_interval,
        phase: 0.0,
        temperature_coefficient: 0.0,
        reference_temperature: 0.0,
    };
    visibility_with(state, &mzi, &mzi, g2, 1.0)
}

fn visibility_with(
    state: &TimeBinState,
    signal_mzi: &InterferometerParams,
    idler_mzi: &InterferometerParams,
    g2: f64,
    coherence: f64,
) -> Result<f64> {
    let max = total_coincidence(&slot_weights(state, signal_mzi, idler_mzi, 0.0, 0.0, coherence)?, g2);
    let min = total_coincidence(
        &slot_weights(state, signal_mzi, idler_mzi, std::f64::consts::PI, 0.0, coherence)?,
        g2,
    );
    Ok((max - min) / (max + min))
}

/// Bell-test threshold for sinusoidal two-photon fringes.
pub const BELL_VISIBILITY_THRESHOLD: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Everything the fringe Monte Carlo needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntanglementSetup {
    pub state: TimeBinState,
    pub signal_interferometer: InterferometerParams,
    pub idler_interferometer: InterferometerParams,
    /// Multiplies the two-path interference term (component mismatch,
    /// polarization, ...). 1 = no extra degradation.
    pub v_extra: f64,
}

/// Transmission and detectors seen by the two arms.
#[derive(Debug, Clone)]
pub struct FringeChannel<'a> {
    pub source: &'a SourceParams,
    pub signal_detector: &'a DetectorParams,
    pub idler_detector: &'a DetectorParams,
    /// Power transmission of the signal path before its detector (chip loss).
    pub signal_transmission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub setting_temp_c: f64,
    pub coincidences: u64,
    pub starts: u64,
    /// Model coincidence probability per start.
    pub analytic_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    pub idler_temp_c: f64,
    pub points: Vec<FringePoint>,
}

impl FringeDataset {
    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> std::io::Result<()> {
        writeln!(w, "# idler_temp_C={}", self.idler_temp_c)?;
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "setting_temp_C,coincidences,starts,analytic_probability")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.6},{},{},{:.12e}",
                p.setting_temp_c, p.coincidences, p.starts, p.analytic_probability
            )?;
        }
        Ok(())
    }
}

/// Conditional coincidence model for one interferometer setting.
struct SettingModel {
    /// Cumulative start weight over output slots.
    start_cdf: Vec<f64>,
    /// P(idler click in slot j | start in slot j), per slot.
    coincidence: Vec<f64>,
    /// P(start is a dark count).
    dark_start_fraction: f64,
    /// Coincidence probability for a dark-count start (accidental idler only).
    dark_start_coincidence: f64,
}

impl SettingModel {
    fn new(setup: &EntanglementSetup, channel: &FringeChannel, phi_s: f64, phi_i: f64) -> Result<Self> {
        let state = &setup.state;
        let g2 = analytic_g2(channel.source)?;
        let w = slot_weights(
            state,
            &setup.signal_interferometer,
            &setup.idler_interferometer,
            phi_s,
            phi_i,
            setup.v_extra,
        )?;
        let s_mean = channel.source.total_signal_mean();
        let i_mean = channel.source.total_idler_mean();
        let eta_s = channel.signal_detector.efficiency * channel.signal_transmission;
        let eta_i = channel.idler_detector.efficiency;
        let dark_s = channel.signal_detector.dark_probability(state.slot_interval);
        let dark_i = channel.idler_detector.dark_probability(state.slot_interval);

        let mut start_cdf = Vec::with_capacity(w.signal.len());
        let mut coincidence = Vec::with_capacity(w.signal.len());
        let mut acc = 0.0;
        let mut photon_starts = 0.0;
        let mut accidental = 0.0;
        for j in 0..w.signal.len() {
            let ws = w.signal[j];
            acc += ws;
            start_cdf.push(acc);
            photon_starts += eta_s * s_mean * ws;
            let p = if ws > 0.0 {
                eta_i * i_mean * (w.idler[j] + (g2 - 1.0) * w.pair[j] / ws) + dark_i
            } else {
                0.0
            };
            coincidence.push(p.min(1.0));
            accidental += eta_i * i_mean * w.idler[j] + dark_i;
        }
        let slots = w.signal.len() as f64;
        let dark_starts = dark_s * slots;
        Ok(Self {
            start_cdf,
            coincidence,
            dark_start_fraction: dark_starts / (dark_starts + photon_starts),
            dark_start_coincidence: accidental / slots,
        })
    }

    fn expected_probability(&self) -> f64 {
        let total = *self.start_cdf.last().unwrap_or(&1.0);
        let mut prev = 0.0;
        let mut photon = 0.0;
        for (c, p) in self.start_cdf.iter().zip(&self.coincidence) {
            photon += (c - prev) / total * p;
            prev = *c;
        }
        (1.0 - self.dark_start_fraction) * photon + self.dark_start_fraction * self.dark_start_coincidence
    }

    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        if rng.random::<f64>() < self.dark_start_fraction {
            return rng.random::<f64>() < self.dark_start_coincidence;
        }
        let total = *self.start_cdf.last().unwrap_or(&1.0);
        let u = rng.random::<f64>() * total;
        let j = self
            .start_cdf
            .partition_point(|&c| c <= u)
            .min(self.coincidence.len() - 1);
        rng.random::<f64>() < self.coincidence[j]
    }
}

/// Model coincidence probability per start at one setting.
pub fn expected_coincidence_probability(
    setup: &EntanglementSetup,
    channel: &FringeChannel,
    signal_temp_c: f64,
    idler_temp_c: f64,
) -> Result<f64> {
    let phi_s = setup.signal_interferometer.phase_at(signal_temp_c);
    let phi_i = setup.idler_interferometer.phase_at(idler_temp_c);
    Ok(SettingModel::new(setup, channel, phi_s, phi_i)?.expected_probability())
}

/// Visibility of the modelled fringe including `v_extra`.
pub fn model_visibility(setup: &EntanglementSetup, source: &SourceParams) -> Result<f64> {
    let g2 = analytic_g2(source)?;
    visibility_with(
        &setup.state,
        &setup.signal_interferometer,
        &setup.idler_interferometer,
        g2,
        setup.v_extra,
    )
}

/// `v_extra` that brings the modelled visibility to `target`.
pub fn calibrate_v_extra(setup: &EntanglementSetup, source: &SourceParams, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidVisibility(target));
    }
    let ideal = model_visibility(
        &EntanglementSetup {
            v_extra: 1.0,
            ..setup.clone()
        },
        source,
    )?;
    // Visibility is linear in the coherence factor for fixed slot weights.
    let v = target / ideal;
    if v > 1.0 {
        return Err(Error::InvalidVisibility(v));
    }
    Ok(v)
}

/// Monte Carlo fringe scan over signal-interferometer temperatures with the
/// idler interferometer held at `idler_temp_c`. Each setting runs `shots`
/// start signals split into deterministic chunks.
pub fn simulate_fringe_scan(
    settings: &[f64],
    idler_temp_c: f64,
    shots: u64,
    setup: &EntanglementSetup,
    channel: &FringeChannel,
    seed: u64,
) -> Result<FringeDataset> {
    if !(0.0..=1.0).contains(&setup.v_extra) {
        return Err(Error::InvalidVisibility(setup.v_extra));
    }
    let phi_i = setup.idler_interferometer.phase_at(idler_temp_c);
    let models = settings
        .iter()
        .map(|&t| SettingModel::new(setup, channel, setup.signal_interferometer.phase_at(t), phi_i))
        .collect::<Result<Vec<_>>>()?;
    let points = settings
        .par_iter()
        .zip(models.par_iter())
        .enumerate()
        .map(|(idx, (&temp, model))| {
            let key = derive_key(seed, &[0xF21A, idler_temp_c.to_bits(), idx as u64]);
            let work: Vec<(u64, u64)> = chunks(shots).collect();
            let coincidences = work
                .par_iter()
                .map(|&(chunk, n)| {
                    let mut rng = chunk_rng(key, chunk);
                    (0..n).filter(|_| model.sample_start(&mut rng)).count() as u64
                })
                .sum();
            FringePoint {
                setting_temp_c: temp,
                coincidences,
                starts: shots,
                analytic_probability: model.expected_probability(),
            }
        })
        .collect();
    Ok(FringeDataset { idler_temp_c, points })
}
