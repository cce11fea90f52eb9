//! Peak fitting, g² estimation, width deconvolution and fringe fitting.
//!
//! Histogram fits run in picoseconds internally so the optimizer's finite
//! differences see O(1)–O(100) parameters; results are reported in seconds.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

use crate::detection::CoincidenceHistogram;
use crate::entanglement::{FringeDataset, BELL_VISIBILITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LsqOptions, LsqResult};

const PS: f64 = 1e-12;

/// Serialized fit quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBlock {
    pub value: f64,
    pub stderr: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    /// s
    pub center: f64,
    pub center_err: f64,
    /// Intensity 1/e half width, s.
    pub e_halfwidth: f64,
    pub e_halfwidth_err: f64,
    /// Peak height above background, counts per bin.
    pub amplitude: f64,
    pub background: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PeakFit {
    fn block(&self, value: f64, stderr: f64) -> FitBlock {
        FitBlock {
            value,
            stderr,
            residual_rms: self.residual_rms,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// `{center_ps, e_halfwidth_ps, amplitude, background}` fit blocks.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "center_ps": self.block(self.center / PS, self.center_err / PS),
            "e_halfwidth_ps": self.block(self.e_halfwidth / PS, self.e_halfwidth_err / PS),
            "amplitude": self.block(self.amplitude, f64::NAN),
            "background": self.block(self.background, f64::NAN),
        })
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Bin range `[center − half, center + half]` clipped to the histogram.
pub fn window_around(hist: &CoincidenceHistogram, center: f64, half_window: f64) -> Range<usize> {
    let lo = ((center - half_window - hist.origin) / hist.bin_width).floor().max(0.0) as usize;
    let hi = ((center + half_window - hist.origin) / hist.bin_width).ceil().max(0.0) as usize;
    lo.min(hist.len())..hi.min(hist.len())
}

/// Fits `a + b·exp(−(t − t₀)²/w²)` to the counts in `window` (bin indices).
///
/// Residuals are weighted by `1/√max(n, 1)`; parameter errors come from the
/// covariance scaled by the reduced χ².
pub fn fit_gaussian_peak(hist: &CoincidenceHistogram, window: Range<usize>) -> Result<PeakFit> {
    let window = window.start..window.end.min(hist.len());
    if window.len() < 7 {
        return Err(Error::NoPeak);
    }
    let xs: Vec<f64> = window.clone().map(|i| hist.bin_center(i) / PS).collect();
    let ys: Vec<f64> = window.clone().map(|i| hist.counts[i] as f64).collect();
    let m = xs.len();

    let (imax, &ymax) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .ok_or(Error::NoPeak)?;
    let edge = (m / 8).clamp(1, 5);
    let background0 = median(ys[..edge].iter().chain(&ys[m - edge..]).copied().collect());
    if imax == 0 || imax == m - 1 || ymax <= background0 {
        return Err(Error::NoPeak);
    }
    let excess: Vec<f64> = ys.iter().map(|y| (y - background0).max(0.0)).collect();
    let total: f64 = excess.iter().sum();
    let x0 = xs[imax];
    let var = xs.iter().zip(&excess).map(|(x, e)| e * (x - x0).powi(2)).sum::<f64>() / total;
    // RMS σ of a Gaussian equals w/√2.
    let w0 = (2.0 * var).sqrt().max(hist.bin_width / PS);

    let weights: Vec<f64> = ys.iter().map(|y| 1.0 / y.max(1.0).sqrt()).collect();
    let model = |p: &[f64], x: f64| p[0] + p[1] * (-((x - p[2]) / p[3]).powi(2)).exp();
    let res = levenberg_marquardt(
        |p, r| {
            for k in 0..m {
                r[k] = (model(p, xs[k]) - ys[k]) * weights[k];
            }
        },
        &[background0, ymax - background0, x0, w0],
        m,
        LsqOptions::default(),
    );
    let p = &res.params;
    if !(p[3].abs() > 0.0 && p.iter().all(|v| v.is_finite())) {
        return Err(Error::SingularFit);
    }
    let cov = res.covariance(true).ok_or(Error::SingularFit)?;
    let rms = (xs.iter().zip(&ys).map(|(x, y)| (model(p, *x) - y).powi(2)).sum::<f64>() / m as f64).sqrt();
    Ok(PeakFit {
        center: p[2] * PS,
        center_err: cov[2][2].max(0.0).sqrt() * PS,
        e_halfwidth: p[3].abs() * PS,
        e_halfwidth_err: cov[3][3].max(0.0).sqrt() * PS,
        amplitude: p[1],
        background: p[0],
        residual_rms: rms,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// Slot geometry for g² integration: slot `k` is centred at
/// `main_center + k·period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotLayout {
    pub main_center: f64,
    pub period: f64,
    pub half_window: f64,
}

impl SlotLayout {
    pub fn center(&self, slot: i64) -> f64 {
        self.main_center + slot as f64 * self.period
    }

    /// Side slots `±1..=±k` that fit fully inside the histogram.
    pub fn side_slots(&self, hist: &CoincidenceHistogram, max_k: i64) -> Vec<i64> {
        let lo = hist.origin;
        let hi = hist.origin + hist.len() as f64 * hist.bin_width;
        (-max_k..=max_k)
            .filter(|&k| k != 0)
            .filter(|&k| {
                let c = self.center(k);
                c - self.half_window >= lo && c + self.half_window <= hi
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    /// Poisson-propagated standard error.
    pub stderr: f64,
    pub main_counts: u64,
    pub side_mean: f64,
    pub side_slots: Vec<i64>,
    /// `g² − 2 > 2·stderr`.
    pub non_classical: bool,
    pub error_model: String,
}

/// `g² = N_main / mean(N_side)` with counts summed over each slot's window.
pub fn compute_g2(
    hist: &CoincidenceHistogram,
    layout: &SlotLayout,
    main_slot: i64,
    side_slots: &[i64],
) -> Result<G2Estimate> {
    if side_slots.len() < 2 || side_slots.contains(&main_slot) {
        return Err(Error::EmptySidePeaks);
    }
    let sum = |k: i64| hist.integrate(layout.center(k), layout.half_window);
    let main = sum(main_slot);
    let side_total: u64 = side_slots.iter().map(|&k| sum(k)).sum();
    if side_total == 0 {
        return Err(Error::EmptySidePeaks);
    }
    let side_mean = side_total as f64 / side_slots.len() as f64;
    let value = main as f64 / side_mean;
    let stderr = if main > 0 {
        value * (1.0 / main as f64 + 1.0 / side_total as f64).sqrt()
    } else {
        1.0 / side_mean
    };
    Ok(G2Estimate {
        value,
        stderr,
        main_counts: main,
        side_mean,
        side_slots: side_slots.to_vec(),
        non_classical: value - 2.0 > 2.0 * stderr,
        error_model: "poisson".into(),
    })
}

/// Signal width from the main-peak width, removing idler width and two
/// detector jitters in quadrature.
pub fn deconvolve_width(sigma_main: f64, sigma_idler: f64, sigma_sspd: f64) -> Result<f64> {
    let floor2 = sigma_idler.powi(2) + 2.0 * sigma_sspd.powi(2);
    let diff = sigma_main.powi(2) - floor2;
    if diff < -1e-12 * floor2 || !diff.is_finite() {
        return Err(Error::NonPhysical {
            sigma_main,
            floor: floor2.sqrt(),
        });
    }
    Ok(diff.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    pub visibility_err: f64,
    /// φ₀ in `C·(1 + V·cos(β·x + φ₀))`, wrapped to (−π, π].
    pub phase_offset: f64,
    pub phase_offset_err: f64,
    /// β, rad per setting unit.
    pub beta: f64,
    pub beta_err: f64,
    /// `2π/β`, setting units.
    pub period: f64,
    pub mean_level: f64,
    pub mean_level_err: f64,
    /// Raw fit visibility was outside [0, 1] and was clamped.
    pub clamped: bool,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FringeFit {
    pub fn to_json(&self) -> serde_json::Value {
        let block = |value: f64, stderr: f64| FitBlock {
            value,
            stderr,
            residual_rms: self.residual_rms,
            iterations: self.iterations,
            converged: self.converged,
        };
        serde_json::json!({
            "visibility": block(self.visibility, self.visibility_err),
            "phase_offset_rad": block(self.phase_offset, self.phase_offset_err),
            "beta_rad_per_unit": block(self.beta, self.beta_err),
            "period": self.period,
            "mean_level": block(self.mean_level, self.mean_level_err),
            "visibility_clamped": self.clamped,
        })
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Weighted linear fit of `a + b·cos(βx) + c·sin(βx)`; returns `(params, χ²)`.
fn linear_fringe(xs: &[f64], ys: &[f64], ws: &[f64], beta: f64) -> Option<([f64; 3], f64)> {
    linear_fringe_full(xs, ys, ws, beta).map(|(p, chi2, _)| (p, chi2))
}

type LinearFit = ([f64; 3], f64, Vec<Vec<f64>>);

fn linear_fringe_full(xs: &[f64], ys: &[f64], ws: &[f64], beta: f64) -> Option<LinearFit> {
    let mut ata = vec![vec![0.0; 3]; 3];
    let mut atb = vec![0.0; 3];
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        let row = [1.0, (beta * x).cos(), (beta * x).sin()];
        for a in 0..3 {
            atb[a] += w * w * row[a] * y;
            for b in 0..3 {
                ata[a][b] += w * w * row[a] * row[b];
            }
        }
    }
    let p = crate::lsq::solve(&ata, &atb)?;
    let chi2 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| (w * (p[0] + p[1] * (beta * x).cos() + p[2] * (beta * x).sin() - y)).powi(2))
        .sum();
    Some(([p[0], p[1], p[2]], chi2, crate::lsq::invert(&ata)?))
}

/// Delta-method visibility error from the linear parametrization; finite at
/// V = 0 where the phase is undetermined.
fn linear_visibility_err(p: [f64; 3], cov: &[Vec<f64>]) -> f64 {
    let [a, b, c] = p;
    let r2 = b * b + c * c;
    if r2 > 0.0 {
        ((b * b * cov[1][1] + c * c * cov[2][2] + 2.0 * b * c * cov[1][2]) / r2)
            .max(0.0)
            .sqrt()
            / a
    } else {
        (0.5 * (cov[1][1] + cov[2][2])).max(0.0).sqrt() / a
    }
}

/// Fits `C·(1 + V·cos(β·x + φ₀))` to coincidences versus setting `x` with
/// Poisson weights. `beta = Some(b)` pins the fringe frequency; `None` fits it.
pub fn fit_fringe(data: &FringeDataset, beta: Option<f64>) -> Result<FringeFit> {
    let xs: Vec<f64> = data.points.iter().map(|p| p.setting_temp_c).collect();
    let ys: Vec<f64> = data.points.iter().map(|p| p.coincidences as f64).collect();
    let m = xs.len();
    if m < 5 {
        return Err(Error::InsufficientSpan(format!("{m} settings, need ≥ 5")));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::InsufficientSpan("settings do not vary".into()));
    }
    if ys.iter().all(|&y| y == 0.0) {
        return Err(Error::DegenerateFit("no coincidences".into()));
    }
    let ws: Vec<f64> = ys.iter().map(|y| 1.0 / y.max(1.0).sqrt()).collect();
    let min_spacing = xs
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);

    let beta0 = match beta {
        Some(b) => b,
        None => {
            // Coarse scan from half a period across the span up to Nyquist.
            let b_min = PI / span;
            let b_max = PI / min_spacing;
            let steps = 400;
            (0..=steps)
                .map(|k| b_min * (b_max / b_min).powf(k as f64 / steps as f64))
                .filter_map(|b| linear_fringe(&xs, &ys, &ws, b).map(|(_, c)| (b, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .ok_or_else(|| Error::DegenerateFit("no frequency candidate".into()))?
                .0
        }
    };
    if beta0.abs() * span < PI * (1.0 - 1e-9) {
        return Err(Error::InsufficientSpan(format!(
            "settings cover {:.3} of a fringe period, need ≥ 0.5",
            beta0.abs() * span / (2.0 * PI)
        )));
    }
    let ([a, b, c], _) =
        linear_fringe(&xs, &ys, &ws, beta0).ok_or_else(|| Error::DegenerateFit("singular design".into()))?;
    if !(a > 0.0) {
        return Err(Error::DegenerateFit("non-positive mean level".into()));
    }
    let v0 = (b * b + c * c).sqrt() / a;
    let phi0 = (-c).atan2(b);

    let free_beta = beta.is_none();
    let model = |p: &[f64], x: f64| {
        let bb = if free_beta { p[3] } else { beta0 };
        p[0] * (1.0 + p[1] * (bb * x + p[2]).cos())
    };
    // Centre x so phase and β decouple in the covariance.
    let x_mid = 0.5 * (lo + hi);
    let xc: Vec<f64> = xs.iter().map(|x| x - x_mid).collect();
    let phi_mid = phi0 + beta0 * x_mid;
    let mut p0 = vec![a, v0.max(1e-3), phi_mid];
    if free_beta {
        p0.push(beta0);
    }
    let res: LsqResult = levenberg_marquardt(
        |p, r| {
            for k in 0..m {
                r[k] = (model(p, xc[k]) - ys[k]) * ws[k];
            }
        },
        &p0,
        m,
        LsqOptions::default(),
    );
    let p = res.params.clone();
    let (cov, vis_err) = match res.covariance(false) {
        Some(cov) => {
            let e = cov[1][1].max(0.0).sqrt();
            (cov, e)
        }
        None if !free_beta => {
            // Vanishing visibility leaves the phase free; fall back to the
            // linear model for the visibility error.
            let (lp, _, lcov) = linear_fringe_full(&xs, &ys, &ws, beta0)
                .ok_or_else(|| Error::DegenerateFit("singular design".into()))?;
            let mut cov = vec![vec![0.0; 3]; 3];
            cov[0][0] = lcov[0][0];
            (cov, linear_visibility_err(lp, &lcov))
        }
        None => return Err(Error::DegenerateFit("singular covariance".into())),
    };
    let (mut vis, mut phase_mid) = (p[1], p[2]);
    if vis < 0.0 {
        vis = -vis;
        phase_mid += PI;
    }
    let beta_fit = if free_beta { p[3] } else { beta0 };
    let clamped = vis > 1.0;
    let vis_clamped = vis.min(1.0);
    let beta_err = if free_beta { cov[3][3].max(0.0).sqrt() } else { 0.0 };
    // Phase at x = 0 and its error including β uncertainty.
    let phase_offset = wrap_phase(phase_mid - beta_fit * x_mid);
    let phase_var = if free_beta {
        cov[2][2] + x_mid * x_mid * cov[3][3] - 2.0 * x_mid * cov[2][3]
    } else {
        cov[2][2]
    };
    let rms = (xc
        .iter()
        .zip(&ys)
        .map(|(x, y)| (model(&p, *x) - y).powi(2))
        .sum::<f64>()
        / m as f64)
        .sqrt();
    Ok(FringeFit {
        visibility: vis_clamped,
        visibility_err: vis_err,
        phase_offset,
        phase_offset_err: phase_var.max(0.0).sqrt(),
        beta: beta_fit,
        beta_err,
        period: 2.0 * PI / beta_fit.abs(),
        mean_level: p[0],
        mean_level_err: cov[0][0].max(0.0).sqrt(),
        clamped,
        residual_rms: rms,
        iterations: res.iterations,
        converged: res.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellCheck {
    pub violated: bool,
    /// `V − 1/√2`.
    pub margin: f64,
}

/// `V − k·err > 1/√2`, strictly.
pub fn bell_violated(fit: &FringeFit, k: f64) -> BellCheck {
    bell_check(fit.visibility, fit.visibility_err, k)
}

pub fn bell_check(visibility: f64, stderr: f64, k: f64) -> BellCheck {
    BellCheck {
        violated: visibility - k * stderr > BELL_VISIBILITY_THRESHOLD,
        margin: visibility - BELL_VISIBILITY_THRESHOLD,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::FringePoint;
    use approx::assert_relative_eq;

    fn synthetic(center: f64, w: f64, amp: f64, bg: f64) -> CoincidenceHistogram {
        let mut h = CoincidenceHistogram::new(1e-9, 5e-12).unwrap();
        for i in 0..h.len() {
            let t = h.bin_center(i);
            h.counts[i] = (bg + amp * (-((t - center) / w).powi(2)).exp()).round() as u64;
        }
        h
    }

    #[test]
    fn recovers_synthetic_peak() {
        let h = synthetic(151.1e-12, 52.7e-12, 5000.0, 20.0);
        let fit = fit_gaussian_peak(&h, window_around(&h, 150e-12, 300e-12)).unwrap();
        assert!((fit.center - 151.1e-12).abs() < 0.05e-12);
        assert!((fit.e_halfwidth - 52.7e-12).abs() < 0.05e-12);
        assert!(fit.converged);
    }

    #[test]
    fn flat_histogram_has_no_peak() {
        let h = synthetic(0.0, 1e-12, 0.0, 100.0);
        assert!(matches!(fit_gaussian_peak(&h, 10..60), Err(Error::NoPeak)));
        assert!(matches!(fit_gaussian_peak(&h, 10..14), Err(Error::NoPeak)));
    }

    #[test]
    fn g2_of_equal_slots_and_boundary() {
        let mut h = CoincidenceHistogram::new(100e-9, 1e-9).unwrap();
        let layout = SlotLayout {
            main_center: 0.5e-9,
            period: 20e-9,
            half_window: 0.4e-9,
        };
        for k in -2..=2 {
            let i = h.bin_index(layout.center(k)).unwrap();
            h.counts[i] = if k == 0 { 200 } else { 100 };
        }
        let g = compute_g2(&h, &layout, 0, &[-2, -1, 1, 2]).unwrap();
        assert_relative_eq!(g.value, 2.0);
        assert!(!g.non_classical);
        assert_relative_eq!(g.stderr, 2.0 * (1.0 / 200.0 + 1.0 / 400.0f64).sqrt());
        assert!(matches!(compute_g2(&h, &layout, 0, &[1]), Err(Error::EmptySidePeaks)));
        assert!(matches!(
            compute_g2(&h, &layout, 0, &[0, 1]),
            Err(Error::EmptySidePeaks)
        ));
    }

    #[test]
    fn deconvolution_values() {
        let ps = 1e-12;
        assert_relative_eq!(
            deconvolve_width(52.7 * ps, 12.0 * ps, 30.0 * ps).unwrap() / ps,
            (52.7f64.powi(2) - 144.0 - 1800.0).sqrt(),
            max_relative = 1e-12
        );
        assert!((deconvolve_width(52.7 * ps, 12.0 * ps, 30.0 * ps).unwrap() / ps - 28.9).abs() < 0.1);
        assert!((deconvolve_width(46.3 * ps, 12.0 * ps, 30.0 * ps).unwrap() / ps - 14.1).abs() < 0.1);
        let floor = (144.0f64 + 1800.0).sqrt() * ps;
        assert_eq!(deconvolve_width(floor, 12.0 * ps, 30.0 * ps).unwrap(), 0.0);
        assert!(matches!(
            deconvolve_width(40.0 * ps, 12.0 * ps, 30.0 * ps),
            Err(Error::NonPhysical { .. })
        ));
    }

    fn fringe(v: f64, beta: f64, phi: f64, c: f64, n: usize, span: f64) -> FringeDataset {
        FringeDataset {
            idler_temp_c: 22.74,
            points: (0..n)
                .map(|k| {
                    let x = 22.0 + span * k as f64 / (n - 1) as f64;
                    FringePoint {
                        setting_temp_c: x,
                        coincidences: (c * (1.0 + v * (beta * x + phi).cos())).round() as u64,
                        starts: 500_000,
                        analytic_probability: 0.0,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn fringe_fit_recovers_noiseless_parameters() {
        let beta = 2.0 * PI / 0.8;
        let d = fringe(0.81, beta, 0.3, 1e6, 21, 0.8);
        for pinned in [Some(beta), None] {
            let f = fit_fringe(&d, pinned).unwrap();
            assert!((f.visibility - 0.81).abs() < 1e-4, "{pinned:?} {f:?}");
            assert!((f.beta - beta).abs() < 1e-3 * beta);
            assert!((wrap_phase(f.phase_offset - 0.3)).abs() < 1e-2);
        }
    }

    #[test]
    fn fringe_fit_errors() {
        let beta = 2.0 * PI / 0.8;
        assert!(matches!(
            fit_fringe(&fringe(0.8, beta, 0.0, 1e3, 4, 0.8), Some(beta)),
            Err(Error::InsufficientSpan(_))
        ));
        assert!(matches!(
            fit_fringe(&fringe(0.8, beta, 0.0, 1e3, 8, 0.1), Some(beta)),
            Err(Error::InsufficientSpan(_))
        ));
        let flat = fit_fringe(&fringe(0.0, beta, 0.0, 1e3, 11, 0.8), Some(beta)).unwrap();
        assert!(flat.visibility < 1e-9 + 3.0 * flat.visibility_err);
    }

    #[test]
    fn bell_threshold() {
        let c = bell_check(0.77, 0.05, 1.0);
        assert!(c.violated);
        assert!((c.margin - 0.063).abs() < 1e-3);
        assert!(!bell_check(BELL_VISIBILITY_THRESHOLD, 0.0, 1.0).violated);
        assert!(!bell_check(0.5, 0.0, 1.0).violated);
        assert!(!bell_check(0.70, 0.0, 1.0).violated);
    }
}
