//! Superconducting single-photon detector model and start–stop time-interval
//! histogramming.
//!
//! Timing jitter is Gaussian. `jitter_e_halfwidth` is the 1/e half width of its
//! intensity-like density `exp(−t²/w²)`, i.e. a normal distribution with
//! standard deviation `w/√2`. Under this convention independent widths add in
//! quadrature.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// counts/s
    pub dark_rate: f64,
    /// seconds
    pub jitter_e_halfwidth: f64,
}

impl DetectorParams {
    pub fn signal_default() -> Self {
        Self {
            efficiency: 0.14,
            dark_rate: 10.0,
            jitter_e_halfwidth: 30e-12,
        }
    }

    pub fn idler_default() -> Self {
        Self {
            efficiency: 0.11,
            ..Self::signal_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidParams(format!(
                "efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        if !(self.dark_rate >= 0.0) {
            return Err(Error::InvalidParams("dark_rate must be ≥ 0".into()));
        }
        if !(self.jitter_e_halfwidth >= 0.0) {
            return Err(Error::InvalidParams("jitter_e_halfwidth must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Standard deviation of the jitter distribution.
    pub fn jitter_sigma(&self) -> f64 {
        self.jitter_e_halfwidth / std::f64::consts::SQRT_2
    }

    pub fn sample_jitter<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sigma = self.jitter_sigma();
        if sigma == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }

    /// Probability of at least one dark count in a window of `duration` seconds.
    pub fn dark_probability(&self, duration: f64) -> f64 {
        -(-self.dark_rate * duration).exp_m1()
    }
}

/// One detection slot: an optional photon arriving at `arrival_time`, plus an
/// independent chance of a dark count uniformly inside
/// `[slot_start, slot_start + slot_duration)`. Returns the earliest click.
pub fn detect<R: Rng + ?Sized>(
    arrival_time: Option<f64>,
    params: &DetectorParams,
    slot_start: f64,
    slot_duration: f64,
    rng: &mut R,
) -> Option<f64> {
    let photon =
        arrival_time.and_then(|t| (rng.random::<f64>() < params.efficiency).then(|| t + params.sample_jitter(rng)));
    let dark = (rng.random::<f64>() < params.dark_probability(slot_duration))
        .then(|| slot_start + rng.random::<f64>() * slot_duration);
    match (photon, dark) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Histogram of `stop − start` delays.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width: f64,
    /// Left edge of bin 0, seconds.
    pub origin: f64,
    pub counts: Vec<u64>,
    pub total_starts: u64,
}

impl CoincidenceHistogram {
    /// Empty histogram covering `[−window, +window)`.
    pub fn new(window: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && window > 0.0) {
            return Err(Error::InvalidParams("window and bin_width must be > 0".into()));
        }
        let bins = (2.0 * window / bin_width).round().max(1.0) as usize;
        Ok(Self {
            bin_width,
            origin: -(bins as f64) * bin_width / 2.0,
            counts: vec![0; bins],
            total_starts: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.bin_width
    }

    pub fn bin_index(&self, delay: f64) -> Option<usize> {
        let x = ((delay - self.origin) / self.bin_width).floor();
        (x >= 0.0 && (x as usize) < self.counts.len()).then_some(x as usize)
    }

    pub fn record(&mut self, delay: f64) {
        if let Some(i) = self.bin_index(delay) {
            self.counts[i] += 1;
        }
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin-wise sum; histograms must share binning.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.counts.len() != other.counts.len() || self.bin_width != other.bin_width || self.origin != other.origin {
            return Err(Error::InvalidParams("histogram binning mismatch".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_starts += other.total_starts;
        Ok(())
    }

    /// Sum of counts in bins whose centres lie in `[center − half, center + half]`.
    pub fn integrate(&self, center: f64, half_window: f64) -> u64 {
        (0..self.counts.len())
            .filter(|&i| (self.bin_center(i) - center).abs() <= half_window)
            .map(|i| self.counts[i])
            .sum()
    }

    /// Writes `#`-prefixed metadata lines followed by `bin_center_ps,counts`.
    pub fn write_csv<W: Write>(&self, mut w: W, seed: u64, extra_header: &[String]) -> std::io::Result<()> {
        writeln!(w, "# total_starts={}", self.total_starts)?;
        writeln!(w, "# bin_width_ps={}", self.bin_width * 1e12)?;
        writeln!(w, "# seed={seed}")?;
        for line in extra_header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "bin_center_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:.6},{}", self.bin_center(i) * 1e12, c)?;
        }
        Ok(())
    }

    /// Reads the CSV layout of [`write_csv`](Self::write_csv). Bins must be
    /// uniformly spaced; `total_starts` defaults to 0 when absent.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut total_starts = 0;
        let mut centers = Vec::new();
        let mut counts = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("total_starts=") {
                    total_starts = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::config(format!("line {}", lineno + 1), "bad total_starts"))?;
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.starts_with("bin_center") {
                    continue;
                }
            }
            let mut fields = line.split(',');
            let bad = || Error::config(format!("line {}", lineno + 1), "expected bin_center_ps,counts");
            let c: f64 = fields.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            let n: f64 = fields.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            if n < 0.0 {
                return Err(bad());
            }
            centers.push(c * 1e-12);
            counts.push(n.round() as u64);
        }
        if centers.len() < 2 {
            return Err(Error::config("histogram", "need at least two bins"));
        }
        let bin_width = (centers[centers.len() - 1] - centers[0]) / (centers.len() - 1) as f64;
        if !(bin_width > 0.0) {
            return Err(Error::config("histogram", "bin centres must increase"));
        }
        for (k, c) in centers.iter().enumerate() {
            let expected = centers[0] + k as f64 * bin_width;
            if (c - expected).abs() > 1e-3 * bin_width {
                return Err(Error::config("histogram", "bins are not uniformly spaced"));
            }
        }
        Ok(Self {
            bin_width,
            origin: centers[0] - bin_width / 2.0,
            counts,
            total_starts,
        })
    }
}

/// Start–stop histogramming: each start adds one count for every stop within
/// `±window`, binned at `stop − start`. Every start increments `total_starts`.
pub fn accumulate(
    start_times: &[f64],
    stop_times: &[f64],
    window: f64,
    bin_width: f64,
) -> Result<CoincidenceHistogram> {
    let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    if !sorted(start_times) || !sorted(stop_times) {
        return Err(Error::UnsortedInput);
    }
    let mut hist = CoincidenceHistogram::new(window, bin_width)?;
    let mut first = 0;
    for &start in start_times {
        hist.total_starts += 1;
        while first < stop_times.len() && stop_times[first] < start - window {
            first += 1;
        }
        for &stop in &stop_times[first..] {
            if stop > start + window {
                break;
            }
            hist.record(stop - start);
        }
    }
    Ok(hist)
}
