use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crow_buffer::analysis::{fit_gaussian_peak, window_around};
use crow_buffer::buffer::{simulate_arm, ArmModel, StartStopSetup};
use crow_buffer::crow_model::ReferenceWaveguideParams;
use crow_buffer::detection::{accumulate, detect, CoincidenceHistogram, DetectorParams};
use crow_buffer::pair_source::{calibrate_noise, PairStatistics, SourceParams};
use crow_buffer::wavepacket::{gaussian_pulse, propagate, TimeGrid};

const PS: f64 = 1e-12;
const N: usize = 1_000_000;

fn ideal(jitter: f64) -> DetectorParams {
    DetectorParams {
        efficiency: 1.0,
        dark_rate: 0.0,
        jitter_e_halfwidth: jitter,
    }
}

#[test]
fn jitter_histogram_has_the_configured_width() {
    let p = ideal(30.0 * PS);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut hist = CoincidenceHistogram::new(200.0 * PS, 1.0 * PS).unwrap();
    let mut sum2 = 0.0;
    for _ in 0..N {
        let t = detect(Some(0.0), &p, -1e-9, 2e-9, &mut rng).unwrap();
        sum2 += t * t;
        hist.record(t);
    }
    let fit = fit_gaussian_peak(&hist, 0..hist.len()).unwrap();
    let w = fit.e_halfwidth / PS;
    assert!((w - 30.0).abs() < 0.5, "fitted width {w} ps");
    // Second-moment cross-check: w = σ√2.
    let w_moment = (2.0 * sum2 / N as f64).sqrt() / PS;
    assert!((w_moment - 30.0).abs() < 0.5, "moment width {w_moment} ps");
}

#[test]
fn detection_is_unbiased() {
    let p = DetectorParams {
        efficiency: 0.14,
        dark_rate: 0.0,
        jitter_e_halfwidth: 30.0 * PS,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let hits = (0..N)
        .filter(|_| detect(Some(0.0), &p, 0.0, 18e-9, &mut rng).is_some())
        .count();
    let frac = hits as f64 / N as f64;
    let se = (0.14 * 0.86 / N as f64).sqrt();
    assert!((frac - 0.14).abs() < 3.0 * se, "{frac}");
}

#[test]
fn dark_count_probability_matches_rate() {
    let p = DetectorParams {
        efficiency: 0.0,
        dark_rate: 1e6,
        jitter_e_halfwidth: 0.0,
    };
    let slot = 100e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let hits = (0..N)
        .filter(|_| detect(None, &p, 0.0, slot, &mut rng).is_some())
        .count();
    let q = p.dark_probability(slot);
    let se = (q * (1.0 - q) / N as f64).sqrt();
    assert!((hits as f64 / N as f64 - q).abs() < 3.0 * se);
}

#[test]
fn poisson_stops_give_a_flat_histogram() {
    let (span, window, bin) = (0.02, 20e-9, 1e-9);
    let rate = 1e8;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut poisson_times = |from: f64, to: f64, r: f64| {
        let mut t = from;
        let mut v = Vec::new();
        loop {
            t += -(1.0 - rng.random::<f64>()).ln() / r;
            if t >= to {
                return v;
            }
            v.push(t);
        }
    };
    let starts = poisson_times(0.0, span, 1e6);
    // Stops extend one window beyond the starts so no start sees an edge.
    let stops = poisson_times(-window, span + window, rate);
    let hist = accumulate(&starts, &stops, window, bin).unwrap();
    assert_eq!(hist.total_starts, starts.len() as u64);
    let expected = starts.len() as f64 * rate * bin;
    let mut chi2 = 0.0;
    for &c in &hist.counts {
        let z = (c as f64 - expected) / expected.sqrt();
        assert!(z.abs() < 3.0, "bin count {c} vs {expected}");
        chi2 += z * z;
    }
    let k = hist.len() as f64;
    assert!((chi2 - k).abs() < 3.0 * (2.0 * k).sqrt(), "chi2 {chi2} over {k} bins");
}

fn reference_arm() -> ArmModel {
    let input = gaussian_pulse(0.0, 12.0 * PS, 1546.7, TimeGrid::centered(0.5 * PS, 4096), true).unwrap();
    let out = propagate(
        &input,
        &ReferenceWaveguideParams::default().transfer_function(&input.angular_frequencies()),
    )
    .unwrap();
    ArmModel::new(&input, &out, 0.0).unwrap()
}

fn setup(source: SourceParams, signal: DetectorParams, idler: DetectorParams) -> StartStopSetup {
    StartStopSetup {
        source,
        signal_detector: signal,
        idler_detector: idler,
        idler_e_halfwidth: 12.0 * PS,
        idler_delay: 0.0,
        window: 60e-9,
        bin_width: 5.0 * PS,
    }
}

#[test]
fn side_peaks_sit_at_multiples_of_the_period() {
    let source = calibrate_noise(0.13, 0.13, 3.25, PairStatistics::Thermal, 53.65e6).unwrap();
    let s = setup(
        source,
        DetectorParams::signal_default(),
        DetectorParams::idler_default(),
    );
    let arm = reference_arm();
    let hist = simulate_arm(&s, &arm, N as u64, 31).unwrap();
    let main = s.expected_center(&arm);
    let period = s.source.period();
    assert!((period - 18.64e-9).abs() < 0.01e-9);
    for k in [-3i32, -2, -1, 0, 1, 2, 3] {
        let expect = main + k as f64 * period;
        let fit = fit_gaussian_peak(&hist, window_around(&hist, expect, 250.0 * PS)).unwrap();
        assert!(
            (fit.center - expect).abs() < hist.bin_width,
            "slot {k}: {} ps vs {} ps",
            fit.center / PS,
            expect / PS
        );
    }
}

#[test]
fn main_peak_width_follows_quadrature() {
    // Bright, lossless-detector regime so 10⁶ starts give a well-sampled peak.
    let source = calibrate_noise(0.13, 0.13, 3.25, PairStatistics::Thermal, 53.65e6).unwrap();
    let arm = reference_arm();

    let clean = setup(source.clone(), ideal(0.0), ideal(0.0));
    let hist = simulate_arm(&clean, &arm, N as u64, 32).unwrap();
    let center = clean.expected_center(&arm);
    let fit = fit_gaussian_peak(&hist, window_around(&hist, center, 100.0 * PS)).unwrap();
    let convolved = arm.signal_e_halfwidth().hypot(clean.idler_e_halfwidth);
    assert!(
        (fit.e_halfwidth / convolved - 1.0).abs() < 0.02,
        "{} vs {} ps",
        fit.e_halfwidth / PS,
        convolved / PS
    );

    let jittery = setup(source, ideal(30.0 * PS), ideal(30.0 * PS));
    let hist = simulate_arm(&jittery, &arm, N as u64, 33).unwrap();
    let fit = fit_gaussian_peak(&hist, window_around(&hist, center, 250.0 * PS)).unwrap();
    let expected = jittery.expected_e_halfwidth(&arm);
    assert!(
        (fit.e_halfwidth / expected - 1.0).abs() < 0.02,
        "{} vs {} ps",
        fit.e_halfwidth / PS,
        expected / PS
    );
}
