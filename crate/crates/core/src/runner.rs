//! End-to-end pipelines behind the `sim` subcommands.
//!
//! Every file written here starts with `config_sha256` and `seed` (as `#`
//! comment lines in CSV, as fields in JSON). Monte Carlo streams depend only on
//! the seed and a fixed per-arm tag, so output bytes do not depend on the
//! worker count.

use serde::Serialize;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{
    bell_violated, compute_g2, deconvolve_width, fit_fringe, fit_gaussian_peak, window_around, BellCheck, FringeFit,
    G2Estimate, PeakFit, SlotLayout,
};
use crate::buffer::{simulate_arm, ArmModel, StartStopSetup};
use crate::config::ScenarioConfig;
use crate::crow_model::{calibrate, Calibration, CrowParams};
use crate::detection::CoincidenceHistogram;
use crate::entanglement::{
    calibrate_v_extra, model_visibility, simulate_fringe_scan, EntanglementSetup, FringeChannel, FringeDataset,
};
use crate::error::{Error, Result};
use crate::seeding::derive_key;
use crate::wavepacket::{gaussian_pulse, measure_e_halfwidth, propagate, PulseEnvelope, TimeGrid};

const PS: f64 = 1e-12;

const TAG_CROW: u64 = 1;
const TAG_REFERENCE: u64 = 2;
const TAG_FRINGE: u64 = 3;

/// Runs `f` on a pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

struct Output {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

impl Output {
    fn new(cfg: &ScenarioConfig, sub: &str) -> Result<Self> {
        let dir = cfg.output_dir.join(sub);
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hash: cfg.hash(),
            seed: cfg.seed,
        })
    }

    fn header(&self) -> Vec<String> {
        vec![format!("config_sha256={}", self.hash)]
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(fs::File::create(self.dir.join(name))?))
    }

    fn write_json(&self, name: &str, mut body: serde_json::Value) -> Result<()> {
        let mut doc = serde_json::json!({ "config_sha256": self.hash, "seed": self.seed });
        if let (Some(d), Some(b)) = (doc.as_object_mut(), body.as_object_mut()) {
            d.append(b);
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_histogram(&self, name: &str, hist: &CoincidenceHistogram, extra: &[String]) -> Result<()> {
        let mut lines = self.header();
        lines.extend_from_slice(extra);
        let mut w = self.create(name)?;
        hist.write_csv(&mut w, self.seed, &lines)?;
        w.flush()?;
        Ok(())
    }
}

/// Calibrated chip parameters: taken from the config, or fitted to its observations.
pub fn resolve_crow(cfg: &ScenarioConfig) -> Result<(CrowParams, Option<Calibration>)> {
    match &cfg.crow {
        Some(c) => Ok((c.clone(), None)),
        None => {
            let cal = calibrate(
                &cfg.calibration.prior,
                &cfg.reference,
                &cfg.calibration.observations,
                signal_wavelength(cfg)?,
            )?;
            Ok((cal.best.params.clone(), Some(cal)))
        }
    }
}

fn signal_wavelength(cfg: &ScenarioConfig) -> Result<f64> {
    Ok(cfg.source.resolve()?.signal_wavelength_nm)
}

fn input_pulse(cfg: &ScenarioConfig, carrier_nm: f64) -> Result<PulseEnvelope> {
    let p = &cfg.pulses;
    gaussian_pulse(
        0.0,
        p.signal_input_e_halfwidth,
        carrier_nm,
        TimeGrid::centered(p.grid_dt, p.grid_points),
        true,
    )
}

fn excess_for(target: Option<f64>, model: f64, field: &str) -> Result<f64> {
    match target {
        None => Ok(0.0),
        Some(t) if t >= model => Ok((t * t - model * model).sqrt()),
        Some(t) => Err(Error::config(
            field,
            format!(
                "target width {:.2} ps is below the dispersion-only width {:.2} ps",
                t / PS,
                model / PS
            ),
        )),
    }
}

/// Signal-arm models for the buffer experiment.
pub struct ArmBuilder {
    crow: CrowParams,
    input: PulseEnvelope,
    crow_excess: f64,
    reference: ArmModel,
}

impl ArmBuilder {
    pub fn new(cfg: &ScenarioConfig, crow: &CrowParams) -> Result<Self> {
        let carrier = signal_wavelength(cfg)?;
        let input = input_pulse(cfg, carrier)?;
        let ref_out = propagate(&input, &cfg.reference.transfer_function(&input.angular_frequencies()))?;
        let ref_width = measure_e_halfwidth(&ref_out)?.e_halfwidth;
        let ref_excess = excess_for(
            cfg.pulses.reference_output_e_halfwidth,
            ref_width,
            "pulses.reference_output_e_halfwidth",
        )?;
        let reference = ArmModel::new(&input, &ref_out, ref_excess)?;
        let mut b = Self {
            crow: crow.clone(),
            input,
            crow_excess: 0.0,
            reference,
        };
        let at_ref = b.crow_output(crow.reference_temperature)?;
        let w = measure_e_halfwidth(&at_ref)?.e_halfwidth;
        b.crow_excess = excess_for(cfg.pulses.crow_output_e_halfwidth, w, "pulses.crow_output_e_halfwidth")?;
        Ok(b)
    }

    fn crow_output(&self, temperature_c: f64) -> Result<PulseEnvelope> {
        self.crow.group_index(self.input.carrier_wavelength_nm, temperature_c)?;
        let h = self
            .crow
            .transfer_function(&self.input.optical_angular_frequencies(), temperature_c);
        propagate(&self.input, &h)
    }

    pub fn crow_arm(&self, temperature_c: f64) -> Result<ArmModel> {
        ArmModel::new(&self.input, &self.crow_output(temperature_c)?, self.crow_excess)
    }

    pub fn reference_arm(&self) -> &ArmModel {
        &self.reference
    }
}

fn start_stop_setup(cfg: &ScenarioConfig) -> Result<StartStopSetup> {
    Ok(StartStopSetup {
        source: cfg.source.resolve()?,
        signal_detector: cfg.detectors.signal.clone(),
        idler_detector: cfg.detectors.idler.clone(),
        idler_e_halfwidth: cfg.pulses.idler_e_halfwidth,
        idler_delay: cfg.histogram.idler_delay,
        window: cfg.histogram.window,
        bin_width: cfg.histogram.bin_width,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub peak: PeakFit,
    pub g2: G2Estimate,
    /// Signal width after deconvolving idler width and jitter, s.
    pub deconvolved_signal_e_halfwidth: f64,
    /// Forward-model main-peak width, s.
    pub expected_e_halfwidth: f64,
}

fn analyze_arm(
    cfg: &ScenarioConfig,
    setup: &StartStopSetup,
    arm: &ArmModel,
    hist: &CoincidenceHistogram,
) -> Result<ArmResult> {
    let expected = setup.expected_e_halfwidth(arm);
    let window = window_around(
        hist,
        setup.expected_center(arm),
        cfg.histogram.fit_half_window_widths * expected,
    );
    let peak = fit_gaussian_peak(hist, window)?;
    let layout = SlotLayout {
        main_center: peak.center,
        period: setup.source.period(),
        half_window: cfg.histogram.g2_half_window_widths * expected,
    };
    let g2 = compute_g2(hist, &layout, 0, &layout.side_slots(hist, 3))?;
    let jitter = ((setup.signal_detector.jitter_e_halfwidth.powi(2) + setup.idler_detector.jitter_e_halfwidth.powi(2))
        / 2.0)
        .sqrt();
    let deconvolved = deconvolve_width(peak.e_halfwidth, setup.idler_e_halfwidth, jitter)?;
    Ok(ArmResult {
        peak,
        g2,
        deconvolved_signal_e_halfwidth: deconvolved,
        expected_e_halfwidth: expected,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BufferPoint {
    pub temperature_c: f64,
    /// CROW delay relative to the reference guide, s.
    pub delay: f64,
    pub delay_err: f64,
    /// Group index at the signal wavelength from the band model.
    pub model_group_index: f64,
    pub crow: ArmResult,
    pub reference: ArmResult,
}

#[derive(Debug, Clone)]
pub struct BufferScanReport {
    pub crow: CrowParams,
    pub points: Vec<BufferPoint>,
    pub output_dir: PathBuf,
}

fn temp_tag(t: f64) -> String {
    format!("{t:.2}")
}

/// Simulates both arms at every configured temperature and writes histograms,
/// peak fits, g² estimates and a delay summary.
pub fn run_buffer_scan(cfg: &ScenarioConfig) -> Result<BufferScanReport> {
    if cfg.temperatures.is_empty() {
        return Err(Error::config(
            "temperatures",
            "buffer scan needs at least one temperature",
        ));
    }
    let out = Output::new(cfg, "buffer")?;
    let (crow, _) = resolve_crow(cfg)?;
    let arms = ArmBuilder::new(cfg, &crow)?;
    let setup = start_stop_setup(cfg)?;

    let reference_hist = simulate_arm(
        &setup,
        arms.reference_arm(),
        cfg.starts,
        derive_key(cfg.seed, &[TAG_REFERENCE]),
    )?;
    out.write_histogram("hist_reference.csv", &reference_hist, &["arm=reference".into()])?;
    let reference = analyze_arm(cfg, &setup, arms.reference_arm(), &reference_hist)?;

    let mut points = Vec::new();
    for &t in &cfg.temperatures {
        let arm = arms.crow_arm(t)?;
        // Same stream at every temperature: common random numbers across the scan.
        let hist = simulate_arm(&setup, &arm, cfg.starts, derive_key(cfg.seed, &[TAG_CROW]))?;
        out.write_histogram(
            &format!("hist_crow_T{}.csv", temp_tag(t)),
            &hist,
            &["arm=crow".into(), format!("temperature_C={t}")],
        )?;
        let crow_res = analyze_arm(cfg, &setup, &arm, &hist)?;
        let delay = reference.peak.center - crow_res.peak.center;
        let delay_err = reference.peak.center_err.hypot(crow_res.peak.center_err);
        let ng = crow.group_index(arms.input.carrier_wavelength_nm, t)?;
        let point = BufferPoint {
            temperature_c: t,
            delay,
            delay_err,
            model_group_index: ng,
            crow: crow_res,
            reference: reference.clone(),
        };
        out.write_json(
            &format!("peakfit_T{}.json", temp_tag(t)),
            serde_json::json!({
                "temperature_C": t,
                "crow": point.crow.peak.to_json(),
                "reference": point.reference.peak.to_json(),
                "delay_ps": { "value": delay / PS, "stderr": delay_err / PS },
                "crow_deconvolved_signal_e_halfwidth_ps": point.crow.deconvolved_signal_e_halfwidth / PS,
                "reference_deconvolved_signal_e_halfwidth_ps": point.reference.deconvolved_signal_e_halfwidth / PS,
                "model_group_index": ng,
            }),
        )?;
        out.write_json(
            &format!("g2_T{}.json", temp_tag(t)),
            serde_json::json!({
                "temperature_C": t,
                "integration_half_window_ps": cfg.histogram.g2_half_window_widths * point.crow.expected_e_halfwidth / PS,
                "crow": point.crow.g2,
                "reference": point.reference.g2,
            }),
        )?;
        points.push(point);
    }

    let mut w = out.create("summary.csv")?;
    for line in out.header() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "# seed={}", cfg.seed)?;
    writeln!(w, "# starts={}", cfg.starts)?;
    writeln!(w, "temp_C,delay_ps,delay_err_ps,g2_crow,g2_err,g2_ref")?;
    for p in &points {
        writeln!(
            w,
            "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.temperature_c,
            p.delay / PS,
            p.delay_err / PS,
            p.crow.g2.value,
            p.crow.g2.stderr,
            p.reference.g2.value
        )?;
    }
    w.flush()?;
    Ok(BufferScanReport {
        crow,
        points,
        output_dir: out.dir,
    })
}

#[derive(Debug, Clone)]
pub struct FringeScan {
    pub data: FringeDataset,
    pub fit: FringeFit,
    pub bell: BellCheck,
}

#[derive(Debug, Clone)]
pub struct EntanglementReport {
    pub v_extra: f64,
    pub model_visibility: f64,
    pub scans: Vec<FringeScan>,
    pub output_dir: PathBuf,
}

/// Fringe scans at each idler-interferometer temperature, with fits and Bell flags.
pub fn run_entanglement_scan(cfg: &ScenarioConfig) -> Result<EntanglementReport> {
    let e = cfg
        .entanglement
        .as_ref()
        .ok_or_else(|| Error::config("entanglement", "block required for the entanglement scan"))?;
    let out = Output::new(cfg, "entangle")?;
    let (crow, _) = resolve_crow(cfg)?;
    let source = e.source.resolve()?;
    let carrier = source.signal_wavelength_nm;
    let input = input_pulse(cfg, carrier)?;
    crow.group_index(carrier, e.crow_temperature)?;
    let stored = propagate(
        &input,
        &crow.transfer_function(&input.optical_angular_frequencies(), e.crow_temperature),
    )?;
    let transmission = stored.energy() / input.energy();

    let mut setup = EntanglementSetup {
        state: e.state,
        signal_interferometer: e.signal_interferometer,
        idler_interferometer: e.idler_interferometer,
        v_extra: 1.0,
    };
    setup.v_extra = match (e.v_extra, e.target_visibility) {
        (Some(v), _) => v,
        (None, Some(target)) => calibrate_v_extra(&setup, &source, target)?,
        (None, None) => unreachable!("validated"),
    };
    let visibility = model_visibility(&setup, &source)?;
    let channel = FringeChannel {
        source: &source,
        signal_detector: &cfg.detectors.signal,
        idler_detector: &cfg.detectors.idler,
        signal_transmission: transmission,
    };
    let key = derive_key(cfg.seed, &[TAG_FRINGE]);
    let beta = e.pin_beta.then_some(e.signal_interferometer.temperature_coefficient);

    let mut scans = Vec::new();
    let mut summary = Vec::new();
    for &ti in &e.idler_temperatures {
        let data = simulate_fringe_scan(&e.signal_temperatures, ti, e.starts_per_setting, &setup, &channel, key)?;
        let name = format!("fringe_idler_T{}", temp_tag(ti));
        let mut w = out.create(&format!("{name}.csv"))?;
        let mut lines = out.header();
        lines.push(format!("seed={}", cfg.seed));
        data.write_csv(&mut w, &lines)?;
        w.flush()?;
        let fit = fit_fringe(&data, beta)?;
        let bell = bell_violated(&fit, e.bell_k);
        let body = serde_json::json!({
            "idler_temp_C": ti,
            "fit": fit.to_json(),
            "bell": bell,
            "bell_k": e.bell_k,
        });
        out.write_json(&format!("{name}_fit.json"), body.clone())?;
        summary.push(body);
        scans.push(FringeScan { data, fit, bell });
    }
    out.write_json(
        "summary.json",
        serde_json::json!({
            "v_extra": setup.v_extra,
            "model_visibility": visibility,
            "signal_transmission": transmission,
            "scans": summary,
        }),
    )?;
    Ok(EntanglementReport {
        v_extra: setup.v_extra,
        model_visibility: visibility,
        scans,
        output_dir: out.dir,
    })
}

/// Fits the band parameters to the configured delay observations.
pub fn run_calibration(cfg: &ScenarioConfig) -> Result<(Calibration, PathBuf)> {
    let out = Output::new(cfg, "calibration")?;
    let signal = signal_wavelength(cfg)?;
    let cal = calibrate(
        &cfg.calibration.prior,
        &cfg.reference,
        &cfg.calibration.observations,
        signal,
    )?;
    let ng_ref = cal
        .best
        .params
        .group_index(signal, cal.best.params.reference_temperature)?;
    out.write_json(
        "calibrated_crow.json",
        serde_json::json!({
            "signal_wavelength_nm": signal,
            "group_index_at_reference_temperature": ng_ref,
            "best": cal.best,
            "alternate": cal.alternate,
        }),
    )?;
    Ok((cal, out.dir))
}

/// Standalone analysis of a histogram CSV: fits the tallest peak and, when a
/// repetition period is given, estimates g² from slots at multiples of it.
pub fn analyze_histogram(
    hist: &CoincidenceHistogram,
    fit_half_window: f64,
    period: Option<f64>,
    g2_half_window: f64,
) -> Result<serde_json::Value> {
    let imax = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .ok_or(Error::NoPeak)?;
    let peak = fit_gaussian_peak(hist, window_around(hist, hist.bin_center(imax), fit_half_window))?;
    let mut doc = serde_json::json!({
        "total_starts": hist.total_starts,
        "peak": peak.to_json(),
    });
    if let Some(period) = period {
        let layout = SlotLayout {
            main_center: peak.center,
            period,
            half_window: g2_half_window,
        };
        let g2 = compute_g2(hist, &layout, 0, &layout.side_slots(hist, 3))?;
        doc["g2"] = serde_json::to_value(g2)?;
    }
    Ok(doc)
}

pub fn read_histogram(path: &Path) -> Result<CoincidenceHistogram> {
    let f = fs::File::open(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    CoincidenceHistogram::read_csv(std::io::BufReader::new(f))
}
