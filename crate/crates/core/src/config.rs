//! Scenario configuration: a single JSON document, unknown keys rejected.
//!
//! Times are in seconds, except where a field name or the embedded
//! [`CrowParams`] documents otherwise.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::crow_model::{
    endpoint_observations, CrowParams, DelayObservation, ReferenceWaveguideParams, SIGNAL_WAVELENGTH_NM,
};
use crate::detection::DetectorParams;
use crate::entanglement::{InterferometerParams, TimeBinState};
use crate::error::{Error, Result};
use crate::pair_source::{calibrate_noise, PairStatistics, SourceParams};

/// How the per-pulse photon statistics are specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Explicit(SourceParams),
    /// Arm totals fixed, pair mean solved so the source g² hits `target_g2`.
    TargetG2 {
        total_signal_mean: f64,
        total_idler_mean: f64,
        target_g2: f64,
        pair_statistics: PairStatistics,
        repetition_rate: f64,
    },
    /// Arm totals fixed, pair mean a fixed fraction of the signal total.
    PairFraction {
        total_signal_mean: f64,
        total_idler_mean: f64,
        pair_fraction: f64,
        pair_statistics: PairStatistics,
        repetition_rate: f64,
    },
}

impl SourceSpec {
    pub fn resolve(&self) -> Result<SourceParams> {
        let p = match self {
            SourceSpec::Explicit(p) => p.clone(),
            SourceSpec::TargetG2 {
                total_signal_mean,
                total_idler_mean,
                target_g2,
                pair_statistics,
                repetition_rate,
            } => calibrate_noise(
                *total_signal_mean,
                *total_idler_mean,
                *target_g2,
                *pair_statistics,
                *repetition_rate,
            )?,
            SourceSpec::PairFraction {
                total_signal_mean,
                total_idler_mean,
                pair_fraction,
                pair_statistics,
                repetition_rate,
            } => {
                if !(0.0..=1.0).contains(pair_fraction) {
                    return Err(Error::InvalidParams(format!(
                        "pair_fraction {pair_fraction} outside [0, 1]"
                    )));
                }
                let mu = pair_fraction * total_signal_mean;
                if mu > *total_idler_mean {
                    return Err(Error::InvalidParams("pair mean exceeds idler total".into()));
                }
                SourceParams {
                    mean_pair: mu,
                    mean_noise_signal: total_signal_mean - mu,
                    mean_noise_idler: total_idler_mean - mu,
                    repetition_rate: *repetition_rate,
                    pair_statistics: *pair_statistics,
                    ..buffer_source_template()
                }
            }
        };
        p.validate()?;
        Ok(p)
    }
}

fn buffer_source_template() -> SourceParams {
    SourceParams {
        mean_pair: 0.0,
        mean_noise_signal: 0.0,
        mean_noise_idler: 0.0,
        repetition_rate: 53.65e6,
        pair_statistics: PairStatistics::Thermal,
        pump_wavelength_nm: 1551.1,
        signal_wavelength_nm: SIGNAL_WAVELENGTH_NM,
        idler_wavelength_nm: 1555.53,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub prior: CrowParams,
    pub observations: Vec<DelayObservation>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            prior: CrowParams::default(),
            observations: endpoint_observations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DetectorPair {
    pub signal: DetectorParams,
    pub idler: DetectorParams,
}

impl Default for DetectorPair {
    fn default() -> Self {
        Self {
            signal: DetectorParams::signal_default(),
            idler: DetectorParams::idler_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// Signal 1/e half width entering the chip.
    pub signal_input_e_halfwidth: f64,
    pub idler_e_halfwidth: f64,
    /// Signal width after the CROW at the reference temperature. Any excess
    /// over the ideal-band result is added as Gaussian broadening.
    pub crow_output_e_halfwidth: Option<f64>,
    /// Same, after the reference guide.
    pub reference_output_e_halfwidth: Option<f64>,
    pub grid_dt: f64,
    pub grid_points: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            signal_input_e_halfwidth: 12e-12,
            idler_e_halfwidth: 12e-12,
            crow_output_e_halfwidth: Some(28e-12),
            reference_output_e_halfwidth: Some(14.1e-12),
            grid_dt: 0.5e-12,
            grid_points: 16384,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    /// Stops are histogrammed over `[−window, +window]`.
    pub window: f64,
    pub bin_width: f64,
    /// Fixed idler path delay.
    pub idler_delay: f64,
    /// g² integration half window in units of the expected main-peak 1/e half width.
    pub g2_half_window_widths: f64,
    /// Peak-fit half window in the same units.
    pub fit_half_window_widths: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            window: 60e-9,
            bin_width: 5e-12,
            idler_delay: 0.0,
            g2_half_window_widths: 3.0,
            fit_half_window_widths: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EntanglementConfig {
    pub state: TimeBinState,
    pub signal_interferometer: InterferometerParams,
    pub idler_interferometer: InterferometerParams,
    pub source: SourceSpec,
    /// Fixed interference degradation factor; if absent it is calibrated to
    /// `target_visibility`.
    pub v_extra: Option<f64>,
    pub target_visibility: Option<f64>,
    /// CROW chip temperature while storing the signal photons.
    pub crow_temperature: f64,
    pub idler_temperatures: Vec<f64>,
    pub signal_temperatures: Vec<f64>,
    pub starts_per_setting: u64,
    /// Pin β in the fringe fit to the signal interferometer's coefficient.
    pub pin_beta: bool,
    /// Bell flag requires `V − k·err > 1/√2`.
    pub bell_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    /// Calibrated chip parameters; calibrated from `calibration` when absent.
    #[serde(default)]
    pub crow: Option<CrowParams>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub reference: ReferenceWaveguideParams,
    pub source: SourceSpec,
    #[serde(default)]
    pub detectors: DetectorPair,
    #[serde(default)]
    pub pulses: PulseConfig,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub entanglement: Option<EntanglementConfig>,
    /// Chip temperatures for the buffer scan, °C.
    #[serde(default)]
    pub temperatures: Vec<f64>,
    /// Start signals per arm and temperature.
    pub starts: u64,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent. Does not affect results.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Same pair fraction as the buffer source calibrated to g² = 3.25 at 0.13.
fn buffer_pair_fraction() -> f64 {
    calibrate_noise(0.13, 0.13, 3.25, PairStatistics::Thermal, 53.65e6)
        .map(|p| p.mean_pair / 0.13)
        .expect("buffer calibration is feasible")
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            scenario: name.to_string(),
            crow: None,
            calibration: CalibrationConfig::default(),
            reference: ReferenceWaveguideParams::default(),
            source: SourceSpec::TargetG2 {
                total_signal_mean: 0.13,
                total_idler_mean: 0.13,
                target_g2: 3.25,
                pair_statistics: PairStatistics::Thermal,
                repetition_rate: 53.65e6,
            },
            detectors: DetectorPair::default(),
            pulses: PulseConfig::default(),
            histogram: HistogramConfig::default(),
            entanglement: None,
            temperatures: vec![21.6, 32.55, 43.5, 54.45, 65.4],
            starts: 1_000_000,
            seed: 20_140_101,
            output_dir: default_output_dir(),
            workers: None,
        };
        match name {
            "buffer" => Ok(base),
            "entangle" => {
                let beta = 2.0 * std::f64::consts::PI / 0.8;
                let mzi = |t_ref: f64| InterferometerParams {
                    arm_delay: 1e-9,
                    phase: 0.0,
                    temperature_coefficient: beta,
                    reference_temperature: t_ref,
                };
                let signal_temperatures = (0..21).map(|k| 22.3 + 0.04 * k as f64).collect();
                Ok(Self {
                    temperatures: vec![],
                    entanglement: Some(EntanglementConfig {
                        state: TimeBinState {
                            slots: 20_000,
                            slot_interval: 0.5e-9,
                        },
                        signal_interferometer: mzi(22.3),
                        idler_interferometer: mzi(22.74),
                        source: SourceSpec::PairFraction {
                            total_signal_mean: 0.01,
                            total_idler_mean: 0.01,
                            pair_fraction: buffer_pair_fraction(),
                            pair_statistics: PairStatistics::Thermal,
                            repetition_rate: 2e9,
                        },
                        v_extra: None,
                        target_visibility: Some(0.79),
                        crow_temperature: 21.6,
                        idler_temperatures: vec![22.74, 22.94],
                        signal_temperatures,
                        starts_per_setting: 500_000,
                        pin_beta: false,
                        bell_k: 1.0,
                    }),
                    ..base
                })
            }
            other => Err(Error::config(
                "scenario",
                format!("unknown preset `{other}` (expected `buffer` or `entangle`)"),
            )),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let at = |path: &'static str| move |e: Error| Error::config(path, e.to_string());
        if let Some(c) = &self.crow {
            c.validate().map_err(at("crow"))?;
        }
        self.calibration.prior.validate().map_err(at("calibration.prior"))?;
        self.reference.validate().map_err(at("reference"))?;
        self.source.resolve().map_err(at("source"))?;
        self.detectors.signal.validate().map_err(at("detectors.signal"))?;
        self.detectors.idler.validate().map_err(at("detectors.idler"))?;
        let p = &self.pulses;
        if !(p.signal_input_e_halfwidth > 0.0 && p.idler_e_halfwidth >= 0.0) {
            return Err(Error::config("pulses", "pulse widths must be positive"));
        }
        if !(p.grid_dt > 0.0 && p.grid_points.is_power_of_two() && p.grid_points >= 8) {
            return Err(Error::config(
                "pulses",
                "grid_dt > 0 and grid_points a power of two ≥ 8",
            ));
        }
        let h = &self.histogram;
        if !(h.window > 0.0 && h.bin_width > 0.0 && h.bin_width < h.window) {
            return Err(Error::config("histogram", "need 0 < bin_width < window"));
        }
        if !(h.g2_half_window_widths > 0.0 && h.fit_half_window_widths > 0.0) {
            return Err(Error::config("histogram", "half windows must be > 0"));
        }
        if self.temperatures.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("temperatures", "non-finite temperature"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be ≥ 1"));
        }
        if let Some(e) = &self.entanglement {
            e.state.validate().map_err(at("entanglement.state"))?;
            e.signal_interferometer
                .slot_shift(e.state.slot_interval)
                .map_err(at("entanglement.signal_interferometer"))?;
            e.idler_interferometer
                .slot_shift(e.state.slot_interval)
                .map_err(at("entanglement.idler_interferometer"))?;
            e.source.resolve().map_err(at("entanglement.source"))?;
            match (e.v_extra, e.target_visibility) {
                (Some(v), _) if !(0.0..=1.0).contains(&v) => {
                    return Err(Error::config("entanglement.v_extra", "must be in [0, 1]"))
                }
                (None, Some(v)) if !(0.0..=1.0).contains(&v) => {
                    return Err(Error::config("entanglement.target_visibility", "must be in [0, 1]"))
                }
                (None, None) => {
                    return Err(Error::config(
                        "entanglement",
                        "one of v_extra or target_visibility is required",
                    ))
                }
                _ => {}
            }
            if e.idler_temperatures.is_empty() {
                return Err(Error::config("entanglement.idler_temperatures", "empty"));
            }
            if e.signal_temperatures.len() < 5 {
                return Err(Error::config("entanglement.signal_temperatures", "need ≥ 5 settings"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with `output_dir` and `workers` removed,
    /// since neither affects results.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("workers");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
