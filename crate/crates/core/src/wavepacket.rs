//! Baseband photon wavepackets and their linear propagation.
//!
//! Conventions used throughout:
//! * spectrum `Ẽ(Ω) = ∫ E(t)·e^{+iΩt} dt`, so a transfer function `exp(iΩτ)`
//!   delays the envelope by `τ`;
//! * widths are 1/e half widths of the intensity `|E|²`. A pulse of width `w`
//!   has field `exp(−(t−t₀)²/(2w²))`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::io::Write;

use crate::crow_model::wavelength_to_omega;
use crate::error::{Error, Result};

/// Uniform sampling grid `t_k = t0 + k·dt`, `k = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    /// Grid of `n` samples centred on zero.
    pub fn centered(dt: f64, n: usize) -> Self {
        Self {
            t0: -(n as f64) * dt / 2.0,
            dt,
            n,
        }
    }

    pub fn span(&self) -> f64 {
        self.dt * self.n as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

impl Default for TimeGrid {
    /// 0.5 ps step, 16384 samples (≈8.2 ns span).
    fn default() -> Self {
        Self::centered(0.5e-12, 16384)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEnvelope {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<Complex64>,
    /// Optical carrier; metadata only, the envelope is baseband.
    pub carrier_wavelength_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthMeasurement {
    /// Intensity 1/e half width, seconds.
    pub e_halfwidth: f64,
    /// More than one region rises above 1/e of the maximum; the widest one was measured.
    pub multi_peak: bool,
}

pub fn gaussian_pulse(
    center_time: f64,
    e_halfwidth: f64,
    carrier_wavelength_nm: f64,
    grid: TimeGrid,
    normalized: bool,
) -> Result<PulseEnvelope> {
    if !grid.n.is_power_of_two() || grid.n < 8 {
        return Err(Error::GridTooSmall(format!(
            "sample count {} must be a power of two ≥ 8",
            grid.n
        )));
    }
    if !(grid.dt > 0.0) {
        return Err(Error::GridTooSmall("dt must be > 0".into()));
    }
    if !(e_halfwidth > 3.0 * grid.dt) {
        return Err(Error::GridTooCoarse {
            width: e_halfwidth,
            dt: grid.dt,
        });
    }
    // erfc(3.5)/2 ≈ 3.7e-7 per side keeps the clipped energy below 1e-6.
    let end = grid.time(grid.n - 1);
    let margin = (center_time - grid.t0).min(end - center_time);
    if margin < 3.5 * e_halfwidth {
        return Err(Error::GridTooSmall(format!(
            "pulse at {center_time:e} s with width {e_halfwidth:e} s does not fit in [{:e}, {end:e}] s",
            grid.t0
        )));
    }
    let samples = (0..grid.n)
        .map(|k| {
            let u = (grid.time(k) - center_time) / e_halfwidth;
            Complex64::new((-0.5 * u * u).exp(), 0.0)
        })
        .collect();
    let mut pulse = PulseEnvelope {
        t0: grid.t0,
        dt: grid.dt,
        samples,
        carrier_wavelength_nm,
    };
    if normalized {
        let scale = 1.0 / pulse.energy().sqrt();
        pulse.samples.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(pulse)
}

impl PulseEnvelope {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            dt: self.dt,
            n: self.samples.len(),
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm_sqr()).collect()
    }

    /// `∫|E|² dt`
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt
    }

    /// Baseband angular frequencies conjugate to the time grid, in FFT order.
    pub fn angular_frequencies(&self) -> Vec<f64> {
        let n = self.samples.len();
        let step = 2.0 * PI / (n as f64 * self.dt);
        (0..n)
            .map(|k| {
                let signed = if k < n.div_ceil(2) {
                    k as f64
                } else {
                    k as f64 - n as f64
                };
                signed * step
            })
            .collect()
    }

    /// Absolute optical angular frequencies `ω_carrier + Ω`, in FFT order.
    pub fn optical_angular_frequencies(&self) -> Vec<f64> {
        let carrier = wavelength_to_omega(self.carrier_wavelength_nm);
        self.angular_frequencies().into_iter().map(|w| carrier + w).collect()
    }

    /// Unnormalized spectrum samples `Σ E_n e^{+iΩ_k (t_n − t0)}` (FFT order).
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut buf = self.samples.clone();
        FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
        buf
    }

    /// `∫|Ẽ|² dΩ/2π`, equal to [`energy`](Self::energy) by Parseval.
    pub fn spectral_energy(&self) -> f64 {
        let n = self.samples.len() as f64;
        self.spectrum().iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt / n
    }

    /// Energy-weighted mean time `∫t|E|²dt / ∫|E|²dt`.
    pub fn centroid(&self) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, s) in self.samples.iter().enumerate() {
            let w = s.norm_sqr();
            num += self.time(k) * w;
            den += w;
        }
        if !(den > 0.0) {
            return Err(Error::ZeroEnergy);
        }
        Ok(num / den)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_ps,re,im,intensity")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(
                w,
                "{:.6},{:.9e},{:.9e},{:.9e}",
                self.time(k) * 1e12,
                s.re,
                s.im,
                s.norm_sqr()
            )?;
        }
        Ok(())
    }
}

/// Multiplies the pulse spectrum by `transfer` (sampled on
/// [`PulseEnvelope::angular_frequencies`]) and returns the output envelope.
pub fn propagate(pulse: &PulseEnvelope, transfer: &[Complex64]) -> Result<PulseEnvelope> {
    let n = pulse.samples.len();
    if transfer.len() != n {
        return Err(Error::GridMismatch {
            expected: n,
            got: transfer.len(),
        });
    }
    let mut planner = FftPlanner::new();
    let mut buf = pulse.samples.clone();
    planner.plan_fft_inverse(n).process(&mut buf);
    for (s, h) in buf.iter_mut().zip(transfer) {
        *s *= h;
    }
    planner.plan_fft_forward(n).process(&mut buf);
    let inv_n = 1.0 / n as f64;
    buf.iter_mut().for_each(|s| *s *= inv_n);
    Ok(PulseEnvelope {
        samples: buf,
        ..pulse.clone()
    })
}

/// Centroid of `output` minus centroid of `input`, seconds.
pub fn measure_delay(input: &PulseEnvelope, output: &PulseEnvelope) -> Result<f64> {
    Ok(output.centroid()? - input.centroid()?)
}

/// Intensity 1/e half width, from linearly interpolated threshold crossings on
/// each side of the maximum.
///
/// A rectangular pulse reports its plateau half width plus the interpolated
/// fraction of one sample on each edge.
pub fn measure_e_halfwidth(pulse: &PulseEnvelope) -> Result<WidthMeasurement> {
    let intensity = pulse.intensity();
    let peak = intensity.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let threshold = peak / std::f64::consts::E;

    // Contiguous runs at or above threshold.
    let mut regions: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (k, &v) in intensity.iter().enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                regions.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        regions.push((s, intensity.len() - 1));
    }
    let multi_peak = regions.len() > 1;
    let &(lo, hi) = regions.iter().max_by_key(|(a, b)| b - a).ok_or(Error::ZeroEnergy)?;

    let crossing = |inside: usize, outside: usize| -> f64 {
        let (a, b) = (intensity[inside], intensity[outside]);
        let frac = if a > b { (a - threshold) / (a - b) } else { 0.0 };
        let (ti, to) = (pulse.time(inside), pulse.time(outside));
        ti + frac * (to - ti)
    };
    let left = if lo > 0 { crossing(lo, lo - 1) } else { pulse.time(lo) };
    let right = if hi + 1 < intensity.len() {
        crossing(hi, hi + 1)
    } else {
        pulse.time(hi)
    };
    Ok(WidthMeasurement {
        e_halfwidth: 0.5 * (right - left),
        multi_peak,
    })
}
