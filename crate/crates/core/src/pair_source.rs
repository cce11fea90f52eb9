//! Photon-pair source driven by spontaneous four-wave mixing.
//!
//! Each pump pulse yields a number of correlated signal/idler pairs drawn from
//! a thermal (single-mode) or Poisson law, plus independent Poisson noise
//! photons in each arm.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PairStatistics {
    Thermal,
    Poisson,
}

impl PairStatistics {
    /// `E[n²]` for mean `mu`.
    pub fn second_moment(self, mu: f64) -> f64 {
        match self {
            PairStatistics::Thermal => 2.0 * mu * mu + mu,
            PairStatistics::Poisson => mu * mu + mu,
        }
    }

    /// Probability generating function `E[zⁿ]`.
    pub fn pgf(self, mu: f64, z: f64) -> f64 {
        match self {
            PairStatistics::Thermal => 1.0 / (1.0 + mu * (1.0 - z)),
            PairStatistics::Poisson => (-mu * (1.0 - z)).exp(),
        }
    }

    /// `P(n = k)`
    pub fn pmf(self, mu: f64, k: u32) -> f64 {
        match self {
            PairStatistics::Thermal => (mu / (1.0 + mu)).powi(k as i32) / (1.0 + mu),
            PairStatistics::Poisson => poisson_pmf(mu, k),
        }
    }
}

pub(crate) fn poisson_pmf(mu: f64, k: u32) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    (k as f64 * mu.ln() - mu - ln_fact).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Correlated pairs per pulse.
    pub mean_pair: f64,
    /// Uncorrelated photons per pulse in the signal arm.
    pub mean_noise_signal: f64,
    pub mean_noise_idler: f64,
    /// Hz
    pub repetition_rate: f64,
    pub pair_statistics: PairStatistics,
    #[serde(default = "default_pump_nm")]
    pub pump_wavelength_nm: f64,
    #[serde(default = "default_signal_nm")]
    pub signal_wavelength_nm: f64,
    #[serde(default = "default_idler_nm")]
    pub idler_wavelength_nm: f64,
}

fn default_pump_nm() -> f64 {
    1551.1
}
fn default_signal_nm() -> f64 {
    1546.70
}
fn default_idler_nm() -> f64 {
    1555.53
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mean_pair", self.mean_pair),
            ("mean_noise_signal", self.mean_noise_signal),
            ("mean_noise_idler", self.mean_noise_idler),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !(self.repetition_rate > 0.0) {
            return Err(Error::InvalidParams("repetition_rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_signal_mean(&self) -> f64 {
        self.mean_pair + self.mean_noise_signal
    }

    pub fn total_idler_mean(&self) -> f64 {
        self.mean_pair + self.mean_noise_idler
    }

    pub fn period(&self) -> f64 {
        1.0 / self.repetition_rate
    }
}

/// Photon content of one pump pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseOutcome {
    pub pulse_index: u64,
    pub n_pairs: u32,
    pub n_noise_signal: u32,
    pub n_noise_idler: u32,
    /// Pump phase, shared by all pulses of one coherence window.
    pub pump_phase: f64,
}

fn sample_poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    Poisson::new(mu).expect("positive finite mean").sample(rng) as u32
}

fn sample_pairs<R: Rng + ?Sized>(stats: PairStatistics, mu: f64, rng: &mut R) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    match stats {
        // P(n) = p(1−p)ⁿ with p = 1/(1+µ): failures before first success.
        PairStatistics::Thermal => Geometric::new(1.0 / (1.0 + mu)).expect("valid probability").sample(rng) as u32,
        PairStatistics::Poisson => sample_poisson(mu, rng),
    }
}

pub fn sample_pulse<R: Rng + ?Sized>(
    params: &SourceParams,
    pulse_index: u64,
    pump_phase: f64,
    rng: &mut R,
) -> PulseOutcome {
    PulseOutcome {
        pulse_index,
        n_pairs: sample_pairs(params.pair_statistics, params.mean_pair, rng),
        n_noise_signal: sample_poisson(params.mean_noise_signal, rng),
        n_noise_idler: sample_poisson(params.mean_noise_idler, rng),
        pump_phase,
    }
}

/// Consecutive pulses with a pump phase redrawn every `coherence_slots` pulses.
pub struct PulseTrain<'a> {
    params: &'a SourceParams,
    coherence_slots: u64,
    next_index: u64,
    phase: f64,
}

impl<'a> PulseTrain<'a> {
    pub fn new(params: &'a SourceParams, coherence_slots: u64) -> Self {
        Self {
            params,
            coherence_slots: coherence_slots.max(1),
            next_index: 0,
            phase: 0.0,
        }
    }

    pub fn next_pulse<R: Rng + ?Sized>(&mut self, rng: &mut R) -> PulseOutcome {
        if self.next_index.is_multiple_of(self.coherence_slots) {
            self.phase = rng.random_range(0.0..2.0 * PI);
        }
        let out = sample_pulse(self.params, self.next_index, self.phase, rng);
        self.next_index += 1;
        out
    }
}

/// Signal–idler cross-correlation `P_si / (P_s·P_i)` in the limit of small
/// detection probability, where each click probability is linear in photon
/// number:
///
/// ```text
/// g² = (E[n_p²] + µc·(µns + µni) + µns·µni) / ((µc + µns)(µc + µni))
/// ```
///
/// With no noise this is `2 + 1/µc` for thermal and `1 + 1/µc` for Poisson pairs.
pub fn analytic_g2(params: &SourceParams) -> Result<f64> {
    let s = params.total_signal_mean();
    let i = params.total_idler_mean();
    if !(s > 0.0 && i > 0.0) {
        return Err(Error::ZeroMean);
    }
    let mu = params.mean_pair;
    let (ns, ni) = (params.mean_noise_signal, params.mean_noise_idler);
    let joint = params.pair_statistics.second_moment(mu) + mu * (ns + ni) + ns * ni;
    Ok(joint / (s * i))
}

/// Per-pulse click probabilities for threshold detectors of efficiency
/// `eta_*` and per-pulse dark probability `dark_*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    pub signal: f64,
    pub idler: f64,
    pub coincidence: f64,
}

impl ClickProbabilities {
    pub fn g2(&self) -> f64 {
        self.coincidence / (self.signal * self.idler)
    }
}

/// Exact click statistics for non-number-resolving detectors.
pub fn click_probabilities(
    params: &SourceParams,
    eta_signal: f64,
    eta_idler: f64,
    dark_signal: f64,
    dark_idler: f64,
) -> ClickProbabilities {
    let stats = params.pair_statistics;
    let mu = params.mean_pair;
    let (qs, qi) = (1.0 - eta_signal, 1.0 - eta_idler);
    let noise = |m: f64, z: f64| PairStatistics::Poisson.pgf(m, z);
    let none_s = stats.pgf(mu, qs) * noise(params.mean_noise_signal, qs) * (1.0 - dark_signal);
    let none_i = stats.pgf(mu, qi) * noise(params.mean_noise_idler, qi) * (1.0 - dark_idler);
    let none_both = stats.pgf(mu, qs * qi)
        * noise(params.mean_noise_signal, qs)
        * noise(params.mean_noise_idler, qi)
        * (1.0 - dark_signal)
        * (1.0 - dark_idler);
    ClickProbabilities {
        signal: 1.0 - none_s,
        idler: 1.0 - none_i,
        coincidence: 1.0 - none_s - none_i + none_both,
    }
}

/// Splits the arm totals into a correlated pair mean and noise so that
/// [`analytic_g2`] equals `target_g2`.
///
/// Each arm keeps its total: `µns = S − µc`, `µni = I − µc`. Then
/// `g² = 1 + (µc² + µc)/(S·I)` (thermal) or `1 + µc/(S·I)` (Poisson), which is
/// increasing in `µc` and inverted in closed form.
pub fn calibrate_noise(
    total_signal_mean: f64,
    total_idler_mean: f64,
    target_g2: f64,
    pair_statistics: PairStatistics,
    repetition_rate: f64,
) -> Result<SourceParams> {
    let (s, i) = (total_signal_mean, total_idler_mean);
    if !(s > 0.0 && i > 0.0) {
        return Err(Error::ZeroMean);
    }
    let build = |mu: f64| SourceParams {
        mean_pair: mu,
        mean_noise_signal: (s - mu).max(0.0),
        mean_noise_idler: (i - mu).max(0.0),
        repetition_rate,
        pair_statistics,
        pump_wavelength_nm: default_pump_nm(),
        signal_wavelength_nm: default_signal_nm(),
        idler_wavelength_nm: default_idler_nm(),
    };
    let mu_max = s.min(i);
    let g2_max = analytic_g2(&build(mu_max))?;
    if !(target_g2 > 1.0 && target_g2 <= g2_max * (1.0 + 1e-12)) {
        return Err(Error::Infeasible {
            target: target_g2,
            min: 1.0,
            max: g2_max,
        });
    }
    let excess = (target_g2 - 1.0) * s * i;
    let mu = match pair_statistics {
        PairStatistics::Thermal => 2.0 * excess / (1.0 + (1.0 + 4.0 * excess).sqrt()),
        PairStatistics::Poisson => excess,
    };
    Ok(build(mu.min(mu_max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(mu: f64, ns: f64, ni: f64, stats: PairStatistics) -> SourceParams {
        SourceParams {
            mean_pair: mu,
            mean_noise_signal: ns,
            mean_noise_idler: ni,
            repetition_rate: 53.65e6,
            pair_statistics: stats,
            pump_wavelength_nm: 1551.1,
            signal_wavelength_nm: 1546.70,
            idler_wavelength_nm: 1555.53,
        }
    }

    /// Sums E[n_s·n_i] over photon-number outcomes up to `cutoff`.
    fn enumerated_g2(p: &SourceParams, cutoff: u32) -> f64 {
        let stats = p.pair_statistics;
        let mut joint = 0.0;
        let (mut ms, mut mi) = (0.0, 0.0);
        for n in 0..=cutoff {
            let pn = stats.pmf(p.mean_pair, n);
            for a in 0..=cutoff {
                let pa = poisson_pmf(p.mean_noise_signal, a);
                for b in 0..=cutoff {
                    let w = pn * pa * poisson_pmf(p.mean_noise_idler, b);
                    joint += w * (n + a) as f64 * (n + b) as f64;
                    ms += w * (n + a) as f64;
                    mi += w * (n + b) as f64;
                }
            }
        }
        joint / (ms * mi)
    }

    #[test]
    fn zero_means_give_empty_pulses() {
        let p = params(0.0, 0.0, 0.0, PairStatistics::Thermal);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..1000 {
            let o = sample_pulse(&p, k, 0.0, &mut rng);
            assert_eq!((o.n_pairs, o.n_noise_signal, o.n_noise_idler), (0, 0, 0));
        }
    }

    #[test]
    fn poisson_g2_against_enumeration() {
        let p = params(0.13, 0.0, 0.0, PairStatistics::Poisson);
        let g2 = analytic_g2(&p).unwrap();
        assert_relative_eq!(g2, 1.0 + 1.0 / 0.13, max_relative = 1e-12);
        assert_relative_eq!(enumerated_g2(&p, 6), g2, max_relative = 1e-4);
        assert!((g2 - 8.69).abs() < 0.01);
    }

    #[test]
    fn noisy_thermal_g2_against_enumeration() {
        let p = params(0.04, 0.09, 0.07, PairStatistics::Thermal);
        assert_relative_eq!(enumerated_g2(&p, 14), analytic_g2(&p).unwrap(), max_relative = 1e-9);
    }

    #[test]
    fn thermal_large_mean_limit() {
        let p = params(1e6, 0.0, 0.0, PairStatistics::Thermal);
        assert!((analytic_g2(&p).unwrap() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn noise_lowers_g2() {
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let n = 0.01 * k as f64;
            let g = analytic_g2(&params(0.05, n, n, PairStatistics::Thermal)).unwrap();
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn zero_mean_is_an_error() {
        assert!(matches!(
            analytic_g2(&params(0.0, 0.0, 0.1, PairStatistics::Thermal)),
            Err(Error::ZeroMean)
        ));
    }

    #[test]
    fn calibrate_noise_round_trip() {
        for stats in [PairStatistics::Thermal, PairStatistics::Poisson] {
            let p = calibrate_noise(0.13, 0.13, 3.25, stats, 53.65e6).unwrap();
            assert_relative_eq!(analytic_g2(&p).unwrap(), 3.25, max_relative = 1e-9);
            assert_relative_eq!(p.total_signal_mean(), 0.13, max_relative = 1e-12);
            assert_relative_eq!(p.total_idler_mean(), 0.13, max_relative = 1e-12);
        }
        let p = calibrate_noise(0.13, 0.13, 3.25, PairStatistics::Thermal, 53.65e6).unwrap();
        // Measured without the waveguide: 3.22 ± 0.05.
        assert!((analytic_g2(&p).unwrap() - 3.22).abs() <= 0.05);
    }

    #[test]
    fn calibrate_noise_boundaries() {
        let zero_noise = analytic_g2(&params(0.13, 0.0, 0.0, PairStatistics::Thermal)).unwrap();
        let p = calibrate_noise(0.13, 0.13, zero_noise, PairStatistics::Thermal, 1.0).unwrap();
        assert!(p.mean_noise_signal.abs() < 1e-12 && p.mean_noise_idler.abs() < 1e-12);
        assert!(matches!(
            calibrate_noise(0.13, 0.13, 1.0, PairStatistics::Thermal, 1.0),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(
            calibrate_noise(0.13, 0.13, zero_noise + 0.5, PairStatistics::Thermal, 1.0),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn click_probabilities_reduce_to_analytic_at_low_efficiency() {
        let p = params(0.04, 0.09, 0.09, PairStatistics::Thermal);
        let c = click_probabilities(&p, 1e-3, 1e-3, 0.0, 0.0);
        assert_relative_eq!(c.g2(), analytic_g2(&p).unwrap(), max_relative = 1e-3);
    }

    #[test]
    fn click_probabilities_against_enumeration() {
        let p = params(0.05, 0.08, 0.03, PairStatistics::Thermal);
        let (es, ei, ds, di): (f64, f64, f64, f64) = (0.3, 0.2, 0.01, 0.02);
        let mut ps = 0.0;
        let mut pi = 0.0;
        let mut psi = 0.0;
        for n in 0..30u32 {
            for a in 0..15u32 {
                for b in 0..15u32 {
                    let w = PairStatistics::Thermal.pmf(p.mean_pair, n)
                        * poisson_pmf(p.mean_noise_signal, a)
                        * poisson_pmf(p.mean_noise_idler, b);
                    let cs = 1.0 - (1.0 - es).powi((n + a) as i32) * (1.0 - ds);
                    let ci = 1.0 - (1.0 - ei).powi((n + b) as i32) * (1.0 - di);
                    ps += w * cs;
                    pi += w * ci;
                    psi += w * cs * ci;
                }
            }
        }
        let c = click_probabilities(&p, es, ei, ds, di);
        assert_relative_eq!(c.signal, ps, max_relative = 1e-10);
        assert_relative_eq!(c.idler, pi, max_relative = 1e-10);
        assert_relative_eq!(c.coincidence, psi, max_relative = 1e-10);
    }

    #[test]
    fn pulse_train_phase_is_constant_within_window() {
        let p = params(0.01, 0.0, 0.0, PairStatistics::Thermal);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut train = PulseTrain::new(&p, 5);
        let pulses: Vec<PulseOutcome> = (0..20).map(|_| train.next_pulse(&mut rng)).collect();
        for w in pulses.chunks(5) {
            assert!(w.iter().all(|o| o.pump_phase == w[0].pump_phase));
        }
        assert_ne!(pulses[0].pump_phase, pulses[5].pump_phase);
        assert_eq!(pulses[19].pulse_index, 19);
    }
}
