//! Tight-binding dispersion of a coupled-resonator optical waveguide (CROW).
//!
//! The band is the nearest-neighbour cosine band
//!
//! ```text
//!     ω(K) = ωc(T) + (Δω/2)·cos(K·Λ),    K ∈ (0, π/Λ)
//! ```
//!
//! where `Λ` is the intercavity spacing and `ωc(T)` follows a band centre that
//! red-shifts linearly with chip temperature. The group index
//! `n_g = c / |dω/dK|` is smallest at the band centre and diverges at the
//! edges, where it is clamped to [`CrowParams::max_group_index`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LsqOptions};

/// Vacuum speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Temperature range over which the linear thermal-shift model is trusted.
pub const VALID_TEMPERATURE_RANGE_C: (f64, f64) = (15.0, 80.0);

/// Operating signal wavelength of the buffer experiment, nm.
pub const SIGNAL_WAVELENGTH_NM: f64 = 1546.70;

pub fn wavelength_to_omega(wavelength_nm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

pub fn omega_to_wavelength(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / omega * 1e9
}

/// Geometric and optical parameters of the CROW chip.
///
/// JSON field units: lengths in µm, wavelengths in nm, `band_halfwidth_angular`
/// in rad/s, `thermal_shift` in nm/°C, temperatures in °C, loss in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CrowParams {
    pub cavity_count: u32,
    pub intercavity_spacing: f64,
    pub length: f64,
    pub band_min_wavelength: f64,
    pub band_max_wavelength: f64,
    pub band_center_ref: f64,
    pub band_halfwidth_angular: f64,
    pub thermal_shift: f64,
    pub reference_temperature: f64,
    pub insertion_loss_db: f64,
    #[serde(default = "default_max_group_index")]
    pub max_group_index: f64,
    /// Fraction of the full bandwidth, at each edge, rolled off by a raised cosine.
    #[serde(default = "default_apodization")]
    pub apodization_fraction: f64,
}

fn default_max_group_index() -> f64 {
    500.0
}

fn default_apodization() -> f64 {
    0.02
}

impl Default for CrowParams {
    /// Uncalibrated prior: 400 cavities at 5·a (a = 420 nm), band centre and
    /// width taken from the nominal 1543–1548 nm transmission band.
    fn default() -> Self {
        let spacing = 5.0 * 0.420;
        let (lo, hi) = (1543.0, 1548.0);
        Self {
            cavity_count: 400,
            intercavity_spacing: spacing,
            length: 400.0 * spacing,
            band_min_wavelength: lo,
            band_max_wavelength: hi,
            band_center_ref: 0.5 * (lo + hi),
            band_halfwidth_angular: 0.5 * (wavelength_to_omega(lo) - wavelength_to_omega(hi)),
            thermal_shift: 0.07,
            reference_temperature: 21.6,
            insertion_loss_db: 26.0,
            max_group_index: default_max_group_index(),
            apodization_fraction: default_apodization(),
        }
    }
}

/// Straight photonic-crystal line-defect waveguide of the same length, used as
/// the zero-delay reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReferenceWaveguideParams {
    /// µm
    pub length: f64,
    pub group_index: f64,
    #[serde(default)]
    pub insertion_loss_db: f64,
}

impl Default for ReferenceWaveguideParams {
    fn default() -> Self {
        Self {
            length: 840.0,
            group_index: 5.0,
            insertion_loss_db: 26.0,
        }
    }
}

impl ReferenceWaveguideParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.group_index >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "reference group_index {} < 1",
                self.group_index
            )));
        }
        if !(self.length >= 0.0) {
            return Err(Error::InvalidParams("reference length < 0".into()));
        }
        Ok(())
    }

    /// Propagation time through the reference guide, seconds.
    pub fn transit_time(&self) -> f64 {
        self.group_index * self.length * 1e-6 / SPEED_OF_LIGHT
    }

    /// Dispersionless transfer function `t·exp(i·n_g·L·Ω/c)` on baseband offsets `Ω`.
    pub fn transfer_function(&self, baseband_omega: &[f64]) -> Vec<Complex64> {
        let t = 10f64.powf(-self.insertion_loss_db / 20.0);
        let tau = self.transit_time();
        baseband_omega
            .iter()
            .map(|&w| Complex64::from_polar(t, w * tau))
            .collect()
    }
}

impl CrowParams {
    pub fn validate(&self) -> Result<()> {
        let expected = self.cavity_count as f64 * self.intercavity_spacing;
        if (self.length - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(Error::InvalidParams(format!(
                "length {} µm != cavity_count × intercavity_spacing = {} µm",
                self.length, expected
            )));
        }
        if !(self.band_min_wavelength < self.band_center_ref && self.band_center_ref < self.band_max_wavelength) {
            return Err(Error::InvalidParams(format!(
                "band_center_ref {} nm outside ({}, {}) nm",
                self.band_center_ref, self.band_min_wavelength, self.band_max_wavelength
            )));
        }
        if !(self.band_halfwidth_angular > 0.0) {
            return Err(Error::InvalidParams("band_halfwidth_angular must be > 0".into()));
        }
        if !(self.thermal_shift >= 0.0) {
            return Err(Error::InvalidParams("thermal_shift must be ≥ 0".into()));
        }
        if !(self.intercavity_spacing > 0.0) {
            return Err(Error::InvalidParams("intercavity_spacing must be > 0".into()));
        }
        if !(self.max_group_index >= 1.0) {
            return Err(Error::InvalidParams("max_group_index must be ≥ 1".into()));
        }
        if !(0.0..0.5).contains(&self.apodization_fraction) {
            return Err(Error::InvalidParams("apodization_fraction must be in [0, 0.5)".into()));
        }
        Ok(())
    }

    fn spacing_m(&self) -> f64 {
        self.intercavity_spacing * 1e-6
    }

    /// Band-centre wavelength at chip temperature `temperature_c`, nm.
    pub fn band_center_at_temperature(&self, temperature_c: f64) -> f64 {
        let (lo, hi) = VALID_TEMPERATURE_RANGE_C;
        if !(lo..=hi).contains(&temperature_c) {
            log::warn!("temperature {temperature_c} °C outside the {lo}–{hi} °C range of the linear thermal model");
        }
        self.band_center_ref + self.thermal_shift * (temperature_c - self.reference_temperature)
    }

    pub fn band_center_omega(&self, temperature_c: f64) -> f64 {
        wavelength_to_omega(self.band_center_at_temperature(temperature_c))
    }

    /// `(ω − ωc(T)) / (Δω/2)`; the band is `|x| ≤ 1`.
    pub fn normalized_detuning(&self, omega: f64, temperature_c: f64) -> f64 {
        (omega - self.band_center_omega(temperature_c)) / self.band_halfwidth_angular
    }

    fn in_band(&self, wavelength_nm: f64, temperature_c: f64) -> Result<f64> {
        let x = self.normalized_detuning(wavelength_to_omega(wavelength_nm), temperature_c);
        if x.abs() > 1.0 || !x.is_finite() {
            return Err(Error::OutOfBand {
                wavelength_nm,
                temperature_c,
                detuning: x,
            });
        }
        Ok(x)
    }

    /// Bloch wavenumber `K` in rad/µm on the branch `K ∈ [0, π/Λ]`.
    pub fn bloch_wavenumber(&self, wavelength_nm: f64, temperature_c: f64) -> Result<f64> {
        let x = self.in_band(wavelength_nm, temperature_c)?;
        Ok(x.acos() / self.intercavity_spacing)
    }

    /// Angular frequency on the band for Bloch wavenumber `k` (rad/µm).
    pub fn dispersion(&self, k: f64, temperature_c: f64) -> f64 {
        self.band_center_omega(temperature_c) + self.band_halfwidth_angular * (k * self.intercavity_spacing).cos()
    }

    /// Minimum (band-centre) group index `2c / (Δω·Λ)`.
    pub fn min_group_index(&self) -> f64 {
        SPEED_OF_LIGHT / (self.band_halfwidth_angular * self.spacing_m())
    }

    fn group_index_from_detuning(&self, x: f64) -> f64 {
        let sin = (1.0 - x * x).max(0.0).sqrt();
        let ng = self.min_group_index() / sin;
        if ng.is_finite() {
            ng.min(self.max_group_index)
        } else {
            self.max_group_index
        }
    }

    pub fn group_index(&self, wavelength_nm: f64, temperature_c: f64) -> Result<f64> {
        let x = self.in_band(wavelength_nm, temperature_c)?;
        Ok(self.group_index_from_detuning(x))
    }

    /// Delay of the CROW relative to the reference guide, picoseconds.
    pub fn buffer_delay(
        &self,
        reference: &ReferenceWaveguideParams,
        wavelength_nm: f64,
        temperature_c: f64,
    ) -> Result<f64> {
        let ng = self.group_index(wavelength_nm, temperature_c)?;
        Ok((ng - reference.group_index) * self.length * 1e-6 / SPEED_OF_LIGHT * 1e12)
    }

    /// CROW frequency response at absolute angular frequencies `omega`.
    ///
    /// In band: `t·a(x)·exp(−i·K(ω)·L)` with `|t|² = 10^(−loss/10)` and `a` a
    /// raised-cosine roll-off over the outer `apodization_fraction` of the band.
    /// On the cosine branch `dK/dω < 0`, so the forward mode accumulates phase
    /// `−K·L`, which gives a positive group delay `n_g·L/c`. Out of band: 0.
    pub fn transfer_function(&self, omega: &[f64], temperature_c: f64) -> Vec<Complex64> {
        let t = 10f64.powf(-self.insertion_loss_db / 20.0);
        let omega_c = self.band_center_omega(temperature_c);
        let edge = 2.0 * self.apodization_fraction;
        let cells = self.length / self.intercavity_spacing;
        omega
            .iter()
            .map(|&w| {
                let x = (w - omega_c) / self.band_halfwidth_angular;
                if !(x.abs() <= 1.0) {
                    return Complex64::new(0.0, 0.0);
                }
                let from_edge = 1.0 - x.abs();
                let apod = if edge > 0.0 && from_edge < edge {
                    0.5 * (1.0 - (PI * from_edge / edge).cos())
                } else {
                    1.0
                };
                Complex64::from_polar(t * apod, -cells * x.acos())
            })
            .collect()
    }
}

/// Which side of the band centre the signal sits on at the reference temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandBranch {
    /// Signal wavelength longer than the band centre (heating red-shifts the
    /// band toward the signal, reducing the delay).
    LongWavelengthSide,
    ShortWavelengthSide,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchFit {
    pub branch: BandBranch,
    pub params: CrowParams,
    /// model − observed, ps, one per observation.
    pub residuals_ps: Vec<f64>,
    pub sum_sq_ps2: f64,
    /// Sign of d(delay)/dT at the first observation: true when heating reduces delay.
    pub heating_reduces_delay: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub best: BranchFit,
    /// Best fit on the opposite side of the band, if any feasible one exists.
    pub alternate: Option<BranchFit>,
}

/// A measured (chip temperature, delay) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct DelayObservation {
    pub temperature_c: f64,
    pub delay_ps: f64,
}

const INFEASIBLE_RESIDUAL_PS: f64 = 1e6;

fn with_band(prior: &CrowParams, center_nm: f64, halfwidth: f64) -> CrowParams {
    CrowParams {
        band_center_ref: center_nm,
        band_halfwidth_angular: halfwidth,
        ..prior.clone()
    }
}

fn residuals_for(
    params: &CrowParams,
    reference: &ReferenceWaveguideParams,
    observations: &[DelayObservation],
    signal_nm: f64,
    out: &mut [f64],
) -> bool {
    let mut feasible = true;
    for (r, obs) in out.iter_mut().zip(observations) {
        match params.buffer_delay(reference, signal_nm, obs.temperature_c) {
            Ok(d) => *r = d - obs.delay_ps,
            Err(_) => {
                feasible = false;
                *r = INFEASIBLE_RESIDUAL_PS;
            }
        }
    }
    feasible
}

fn fit_branch(
    prior: &CrowParams,
    reference: &ReferenceWaveguideParams,
    observations: &[DelayObservation],
    signal_nm: f64,
    branch: BandBranch,
) -> Option<BranchFit> {
    let (lo, hi) = match branch {
        BandBranch::LongWavelengthSide => (prior.band_min_wavelength, prior.band_max_wavelength.min(signal_nm)),
        BandBranch::ShortWavelengthSide => (prior.band_min_wavelength.max(signal_nm), prior.band_max_wavelength),
    };
    if !(lo < hi) {
        return None;
    }
    // Half-width search range spans group indices from max_group_index down to 1.
    let spacing = prior.intercavity_spacing * 1e-6;
    let h_min = SPEED_OF_LIGHT / (prior.max_group_index * spacing);
    let h_max = SPEED_OF_LIGHT / spacing;
    let m = observations.len();
    let mut r = vec![0.0; m];

    // Coarse grid search over (centre, ln half-width) for a feasible start.
    const GRID: usize = 241;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 1..GRID - 1 {
        let c = lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
        for j in 0..GRID {
            let ln_h = h_min.ln() + (h_max.ln() - h_min.ln()) * j as f64 / (GRID - 1) as f64;
            let p = with_band(prior, c, ln_h.exp());
            if !residuals_for(&p, reference, observations, signal_nm, &mut r) {
                continue;
            }
            let ss: f64 = r.iter().map(|v| v * v).sum();
            if best.is_none_or(|(_, _, b)| ss < b) {
                best = Some((c, ln_h, ss));
            }
        }
    }
    let (c0, ln_h0, _) = best?;

    let clamp_center = |c: f64| c.clamp(lo + 1e-9 * (hi - lo), hi - 1e-9 * (hi - lo));
    let fit = levenberg_marquardt(
        |p, out| {
            let params = with_band(prior, clamp_center(p[0]), p[1].exp());
            residuals_for(&params, reference, observations, signal_nm, out);
        },
        &[c0, ln_h0],
        m,
        LsqOptions {
            max_iterations: 500,
            rel_tol: 1e-13,
            initial_lambda: 1e-3,
        },
    );
    let params = with_band(prior, clamp_center(fit.params[0]), fit.params[1].exp());
    if !residuals_for(&params, reference, observations, signal_nm, &mut r) {
        return None;
    }
    let t0 = observations[0].temperature_c;
    let d0 = params.buffer_delay(reference, signal_nm, t0).ok()?;
    let heating_reduces_delay = params
        .buffer_delay(reference, signal_nm, t0 + 0.01)
        .map(|d1| d1 < d0)
        .unwrap_or(false);
    Some(BranchFit {
        branch,
        sum_sq_ps2: r.iter().map(|v| v * v).sum(),
        residuals_ps: r,
        params,
        heating_reduces_delay,
    })
}

/// Fits `band_center_ref` and `band_halfwidth_angular` to measured delays at a
/// fixed signal wavelength.
///
/// Both sides of the band are fitted. The lower residual wins; when the two
/// fit equally well, the branch on which heating reduces the delay is chosen.
pub fn calibrate(
    prior: &CrowParams,
    reference: &ReferenceWaveguideParams,
    observations: &[DelayObservation],
    signal_wavelength_nm: f64,
) -> Result<Calibration> {
    let mut temps: Vec<f64> = observations.iter().map(|o| o.temperature_c).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if temps.len() < 2 {
        return Err(Error::NoFeasibleFit(
            "need observations at ≥ 2 distinct temperatures".into(),
        ));
    }
    let fits: Vec<BranchFit> = [BandBranch::LongWavelengthSide, BandBranch::ShortWavelengthSide]
        .into_iter()
        .filter_map(|b| fit_branch(prior, reference, observations, signal_wavelength_nm, b))
        .collect();
    let mut fits = fits.into_iter();
    let (best, alternate) = match (fits.next(), fits.next()) {
        (None, _) => {
            return Err(Error::NoFeasibleFit(format!(
                "signal {signal_wavelength_nm} nm cannot be placed in band at all observation temperatures"
            )))
        }
        (Some(a), None) => (a, None),
        (Some(a), Some(b)) => {
            let scale = a.sum_sq_ps2.max(b.sum_sq_ps2).max(1e-12);
            let tie = (a.sum_sq_ps2 - b.sum_sq_ps2).abs() <= 1e-6 * scale;
            let a_first = if tie {
                a.heating_reduces_delay || !b.heating_reduces_delay
            } else {
                a.sum_sq_ps2 < b.sum_sq_ps2
            };
            if a_first {
                (a, Some(b))
            } else {
                (b, Some(a))
            }
        }
    };
    Ok(Calibration { best, alternate })
}

/// The two delay endpoints of the thermal tuning measurement.
pub fn endpoint_observations() -> Vec<DelayObservation> {
    vec![
        DelayObservation {
            temperature_c: 21.6,
            delay_ps: 151.1,
        },
        DelayObservation {
            temperature_c: 65.4,
            delay_ps: 103.0,
        },
    ]
}
