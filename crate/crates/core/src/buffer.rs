//! Start–stop Monte Carlo of the buffer experiment.
//!
//! Each simulated event is one start signal. The pump pulse that produced it
//! is drawn from its posterior given a signal click (or a signal dark count),
//! and idler stops are generated for that pulse and its neighbours within the
//! histogram window. Signal arrival times follow the intensity profile of the
//! pulse propagated through the arm, with optional extra Gaussian broadening.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::detection::{CoincidenceHistogram, DetectorParams};
use crate::error::{Error, Result};
use crate::pair_source::{poisson_pmf, PairStatistics, SourceParams};
use crate::seeding::{chunk_rng, chunks};
use crate::wavepacket::{measure_e_halfwidth, PulseEnvelope};

/// Inverse-CDF sampler over a pulse intensity profile.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    t0: f64,
    dt: f64,
    cdf: Vec<f64>,
}

impl ArrivalSampler {
    pub fn from_pulse(pulse: &PulseEnvelope) -> Result<Self> {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pulse
            .intensity()
            .into_iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::ZeroEnergy);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self {
            t0: pulse.t0,
            dt: pulse.dt,
            cdf,
        })
    }

    /// Sample `k` covers `[t_k − dt/2, t_k + dt/2)`; linear within the sample.
    pub fn sample(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        let lo = if k == 0 { 0.0 } else { self.cdf[k - 1] };
        let span = self.cdf[k] - lo;
        let frac = if span > 0.0 {
            ((u - lo) / span).clamp(0.0, 1.0)
        } else {
            0.5
        };
        self.t0 + (k as f64 - 0.5 + frac) * self.dt
    }
}

/// Signal path through one device (CROW or reference guide).
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub sampler: ArrivalSampler,
    /// Output/input pulse energy, including insertion loss.
    pub transmission: f64,
    /// Centroid of the output pulse, s.
    pub mean_arrival: f64,
    /// 1/e half width of the propagated pulse, s.
    pub model_e_halfwidth: f64,
    /// Extra Gaussian broadening (1/e half width), s.
    pub excess_e_halfwidth: f64,
}

impl ArmModel {
    pub fn new(input: &PulseEnvelope, output: &PulseEnvelope, excess_e_halfwidth: f64) -> Result<Self> {
        Ok(Self {
            sampler: ArrivalSampler::from_pulse(output)?,
            transmission: output.energy() / input.energy(),
            mean_arrival: output.centroid()?,
            model_e_halfwidth: measure_e_halfwidth(output)?.e_halfwidth,
            excess_e_halfwidth,
        })
    }

    /// Signal width seen at the detector before jitter.
    pub fn signal_e_halfwidth(&self) -> f64 {
        self.model_e_halfwidth.hypot(self.excess_e_halfwidth)
    }
}

/// Everything shared by both arms of a buffer scan.
#[derive(Debug, Clone)]
pub struct StartStopSetup {
    pub source: SourceParams,
    pub signal_detector: DetectorParams,
    pub idler_detector: DetectorParams,
    /// Idler pulse 1/e half width, s.
    pub idler_e_halfwidth: f64,
    /// Fixed idler path delay relative to the signal launch, s.
    pub idler_delay: f64,
    /// Half width of the stop acceptance window, s.
    pub window: f64,
    pub bin_width: f64,
}

impl StartStopSetup {
    /// Expected main-peak centre for `arm` in stop − start coordinates.
    pub fn expected_center(&self, arm: &ArmModel) -> f64 {
        self.idler_delay - arm.mean_arrival
    }

    /// Expected main-peak 1/e half width: signal, idler and both jitters in quadrature.
    pub fn expected_e_halfwidth(&self, arm: &ArmModel) -> f64 {
        (arm.signal_e_halfwidth().powi(2)
            + self.idler_e_halfwidth.powi(2)
            + self.signal_detector.jitter_e_halfwidth.powi(2)
            + self.idler_detector.jitter_e_halfwidth.powi(2))
        .sqrt()
    }
}

/// Cumulative table over a small discrete distribution.
#[derive(Debug, Clone)]
struct Table<T> {
    cdf: Vec<f64>,
    values: Vec<T>,
}

impl<T: Copy> Table<T> {
    fn new(entries: Vec<(f64, T)>) -> Self {
        let total: f64 = entries.iter().map(|e| e.0).sum();
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (w, v) in entries {
            acc += w / total;
            cdf.push(acc);
            values.push(v);
        }
        Self { cdf, values }
    }

    fn sample(&self, u: f64) -> T {
        let k = self.cdf.partition_point(|&c| c <= u).min(self.values.len() - 1);
        self.values[k]
    }
}

#[derive(Debug, Clone, Copy)]
enum StartKind {
    /// Photon start from a pulse with this many pairs.
    Photon(u32),
    Dark,
}

const MAX_PHOTONS: u32 = 60;

fn pair_pmf(stats: PairStatistics, mu: f64) -> Vec<f64> {
    (0..=MAX_PHOTONS).map(|k| stats.pmf(mu, k)).collect()
}

fn poisson_table(mu: f64) -> Vec<f64> {
    (0..=MAX_PHOTONS).map(|k| poisson_pmf(mu, k)).collect()
}

/// Precomputed distributions for the per-start sampler.
struct StartModel {
    starts: Table<StartKind>,
    /// Detected idler photons from an unconditioned pulse.
    idler_any: Table<u32>,
    /// Detected idler noise photons (pair photons are thinned separately).
    idler_noise: Table<u32>,
    eta_idler: f64,
    idler_sigma: f64,
    signal_excess_sigma: f64,
    period: f64,
    /// Pulses on each side of the start pulse that can reach the window.
    neighbours: i64,
    idler_dark_window_prob: f64,
}

impl StartModel {
    fn new(setup: &StartStopSetup, arm: &ArmModel) -> Result<Self> {
        let src = &setup.source;
        src.validate()?;
        setup.signal_detector.validate()?;
        setup.idler_detector.validate()?;
        if !(setup.window > 0.0 && setup.bin_width > 0.0) {
            return Err(Error::InvalidParams("window and bin_width must be > 0".into()));
        }
        let period = src.period();
        let eta_s = setup.signal_detector.efficiency * arm.transmission;
        let eta_i = setup.idler_detector.efficiency;
        let dark_s = setup.signal_detector.dark_probability(period);

        let pairs = pair_pmf(src.pair_statistics, src.mean_pair);
        let noise_s = poisson_table(src.mean_noise_signal);
        let mut entries = Vec::new();
        let mut p_no_photon_click = 0.0;
        for (p, wp) in pairs.iter().enumerate() {
            let mut weight = 0.0;
            for (q, wq) in noise_s.iter().enumerate() {
                let none = (1.0 - eta_s).powi((p + q) as i32);
                weight += wp * wq * (1.0 - none);
                p_no_photon_click += wp * wq * none;
            }
            if weight > 0.0 {
                entries.push((weight, StartKind::Photon(p as u32)));
            }
        }
        entries.push((p_no_photon_click * dark_s, StartKind::Dark));
        if entries.iter().all(|e| e.0 <= 0.0) {
            return Err(Error::InvalidParams("signal detector can never click".into()));
        }

        // Thinning keeps the family: thermal(µ) → thermal(ηµ), Poisson(µ) → Poisson(ηµ).
        let thinned_pairs = pair_pmf(src.pair_statistics, eta_i * src.mean_pair);
        let thinned_noise = poisson_table(eta_i * src.mean_noise_idler);
        let mut any = vec![0.0; (MAX_PHOTONS + 1) as usize];
        for (a, pa) in thinned_pairs.iter().enumerate() {
            for (b, pb) in thinned_noise.iter().enumerate() {
                if a + b <= MAX_PHOTONS as usize {
                    any[a + b] += pa * pb;
                }
            }
        }
        let to_table = |v: Vec<f64>| Table::new(v.into_iter().enumerate().map(|(k, w)| (w, k as u32)).collect());

        let reach = setup.window + setup.idler_delay.abs() + arm.mean_arrival.abs();
        Ok(Self {
            starts: Table::new(entries),
            idler_any: to_table(any),
            idler_noise: to_table(thinned_noise),
            eta_idler: eta_i,
            idler_sigma: setup.idler_e_halfwidth / std::f64::consts::SQRT_2,
            signal_excess_sigma: arm.excess_e_halfwidth / std::f64::consts::SQRT_2,
            period,
            neighbours: (reach / period).ceil() as i64 + 1,
            idler_dark_window_prob: setup.idler_detector.dark_probability(2.0 * setup.window),
        })
    }
}

fn normal<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

fn simulate_chunk<R: Rng + ?Sized>(
    setup: &StartStopSetup,
    arm: &ArmModel,
    model: &StartModel,
    starts: u64,
    hist: &mut CoincidenceHistogram,
    rng: &mut R,
) {
    let idler_det = &setup.idler_detector;
    let mut stops: Vec<f64> = Vec::with_capacity(8);
    for _ in 0..starts {
        hist.total_starts += 1;
        stops.clear();
        let kind = model.starts.sample(rng.random::<f64>());
        let start = match kind {
            StartKind::Photon(_) => {
                arm.sampler.sample(rng.random::<f64>())
                    + normal(model.signal_excess_sigma, rng)
                    + setup.signal_detector.sample_jitter(rng)
            }
            StartKind::Dark => arm.mean_arrival + (rng.random::<f64>() - 0.5) * model.period,
        };
        for k in -model.neighbours..=model.neighbours {
            let detected = match (k, kind) {
                (0, StartKind::Photon(pairs)) => {
                    let partners = (0..pairs).filter(|_| rng.random::<f64>() < model.eta_idler).count() as u32;
                    partners + model.idler_noise.sample(rng.random::<f64>())
                }
                _ => model.idler_any.sample(rng.random::<f64>()),
            };
            if detected == 0 {
                continue;
            }
            let first = (0..detected)
                .map(|_| normal(model.idler_sigma, rng))
                .fold(f64::INFINITY, f64::min);
            let t = k as f64 * model.period + setup.idler_delay + first + idler_det.sample_jitter(rng);
            stops.push(t);
        }
        if rng.random::<f64>() < model.idler_dark_window_prob {
            stops.push(start + (2.0 * rng.random::<f64>() - 1.0) * setup.window);
        }
        for &s in &stops {
            let d = s - start;
            if d.abs() <= setup.window {
                hist.record(d);
            }
        }
    }
}

/// Histogram of `stop − start` for `starts` start signals through `arm`.
/// Deterministic in `key`, independent of the rayon worker count.
pub fn simulate_arm(setup: &StartStopSetup, arm: &ArmModel, starts: u64, key: u64) -> Result<CoincidenceHistogram> {
    let model = StartModel::new(setup, arm)?;
    let empty = CoincidenceHistogram::new(setup.window, setup.bin_width)?;
    let work: Vec<(u64, u64)> = chunks(starts).collect();
    let parts: Vec<CoincidenceHistogram> = work
        .par_iter()
        .map(|&(chunk, n)| {
            let mut h = empty.clone();
            let mut rng = chunk_rng(key, chunk);
            simulate_chunk(setup, arm, &model, n, &mut h, &mut rng);
            h
        })
        .collect();
    let mut total = empty;
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}
