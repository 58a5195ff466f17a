use statrs::function::erf::erf;
use tdet::detectors::{Detector, Fma, FmaForm};
use tdet::rng::RngStream;
use tdet::streak::{
    analytic_threshold, calibrate_scan_threshold, enumerate_directions, render_profile, run_trial,
    run_trials, scan_all, scan_direction, synth_frame, BenchConfig, Direction, PixelRect,
    SearchConfig, StreakParams, Trial,
};

/// Closed-form line integral of an isotropic Gaussian of width `w` along the segment, at `(x, y)`.
fn line_integral(s: &StreakParams, x: f64, y: f64) -> f64 {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len = dx.hypot(dy);
    let (ux, uy) = (dx / len, dy / len);
    let (px, py) = (x - s.x0, y - s.y0);
    let t = px * ux + py * uy;
    let d2 = (px * px + py * py - t * t).max(0.0);
    let w = s.psf_width;
    let r = std::f64::consts::SQRT_2 * w;
    (-d2 / (2.0 * w * w)).exp() * w * (std::f64::consts::PI / 2.0).sqrt() * (erf((len - t) / r) - erf(-t / r))
}

#[test]
fn profile_matches_the_closed_form_line_integral() {
    for s in [
        StreakParams::new(20.3, 10.7, 27.9, 60.2, 1.0, 1.3).unwrap(),
        StreakParams::new(30.0, 5.0, 12.5, 44.0, 1.0, 0.8).unwrap(),
        StreakParams::new(15.2, 20.0, 15.2, 23.5, 1.0, 1.0).unwrap(),
    ] {
        let rect = PixelRect::full(48, 72);
        let p = render_profile(&s, &rect).unwrap();
        let exact: Vec<f64> = (0..72)
            .flat_map(|r| (0..48).map(move |c| (r, c)))
            .map(|(r, c)| line_integral(&s, c as f64, r as f64))
            .collect();
        let peak = exact.iter().copied().fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for (v, e) in p.values.iter().zip(&exact) {
            worst = worst.max((v - e / peak).abs());
        }
        assert!(worst < 0.01, "{s:?}: worst pixel difference {worst}");
        let mass = exact.iter().sum::<f64>() / peak;
        assert!((p.sum() / mass - 1.0).abs() < 0.01, "{s:?}: mass {} vs {mass}", p.sum());
    }
}

fn strip_cfg(width: usize, height: usize) -> SearchConfig {
    SearchConfig::new(SearchConfig::central_strip(width, height, 16).unwrap(), 1.0)
}

fn find(dirs: &[Direction], top: f64, bottom: f64) -> Direction {
    *dirs
        .iter()
        .find(|d| d.x_top == top && d.x_bottom == bottom)
        .expect("direction on the grid")
}

#[test]
fn filter_output_is_standard_normal_under_noise() {
    let sigma = 2.0;
    let cfg = strip_cfg(64, 128);
    let dirs = enumerate_directions(&cfg);
    let n = 600;
    for d in [find(&dirs, 32.0, 32.0), find(&dirs, 26.5, 37.0)] {
        let z: Vec<f64> = (0..n)
            .map(|r| {
                let f = synth_frame(64, 128, None, sigma, &mut RngStream::new(41, r)).unwrap();
                let t = scan_direction(&f, &d, &cfg).unwrap();
                t.value_at(70).unwrap() / (sigma * (cfg.window_len as f64).sqrt())
            })
            .collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{d:?}: mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{d:?}: variance {var}");
    }
}

#[test]
fn single_column_scan_is_the_one_dimensional_fma() {
    let mut cfg = strip_cfg(64, 128);
    cfg.window_width = 1;
    let truth = StreakParams::new(30.0, 20.0, 30.0, 90.0, 2.0, 1.0).unwrap();
    let f = synth_frame(64, 128, Some(&truth), 1.0, &mut RngStream::new(2, 0)).unwrap();
    let d = find(&enumerate_directions(&cfg), 30.0, 30.0);
    let t = scan_direction(&f, &d, &cfg).unwrap();
    let mut fma = Fma::new(cfg.window_len, f64::INFINITY, FmaForm::Llr).unwrap();
    for row in 0..128 {
        fma.observe(f.at(row, 30)).unwrap();
        if let Some(s) = fma.decision_statistic() {
            let r = t.value_at(row).unwrap();
            assert!((r - s).abs() < 1e-9, "row {row}: {r} vs {s}");
        }
    }
}

#[test]
fn noiseless_statistic_is_constant_along_the_streak_interior() {
    let cfg = strip_cfg(64, 128);
    let truth = StreakParams::new(32.0, 10.0, 32.0, 118.0, 3.0, 1.0).unwrap();
    let f = synth_frame(64, 128, Some(&truth), 1e-300, &mut RngStream::new(1, 0)).unwrap();
    let t = scan_direction(&f, &find(&enumerate_directions(&cfg), 32.0, 32.0), &cfg).unwrap();
    // windows fully inside rows 17..=111, away from the ends by more than the PSF support
    let inner: Vec<f64> = (17 + cfg.window_len - 1..=111).map(|s| t.value_at(s).unwrap()).collect();
    let first = inner[0];
    assert!(first > 0.0);
    for v in &inner {
        assert!((v / first - 1.0).abs() < 1e-5, "{v} vs {first}");
    }
}

#[test]
fn exceedance_fraction_matches_the_step_alpha() {
    let alpha = 0.01;
    let sigma = 1.5;
    let mut cfg = strip_cfg(64, 128);
    cfg.threshold = analytic_threshold(sigma, cfg.window_len, alpha).unwrap();
    let (mut above, mut total) = (0usize, 0usize);
    for r in 0..300 {
        let f = synth_frame(64, 128, None, sigma, &mut RngStream::new(8, r)).unwrap();
        for t in scan_all(&f, &cfg).unwrap() {
            above += t.values.iter().filter(|v| **v >= cfg.threshold).count();
            total += t.values.len();
        }
    }
    let frac = above as f64 / total as f64;
    assert!((frac / alpha - 1.0).abs() < 0.3, "exceedance {frac}");

    let calibrated = calibrate_scan_threshold(sigma, cfg.window_len, alpha, 100_000, 3).unwrap();
    assert!((calibrated / cfg.threshold - 1.0).abs() < 0.02, "{calibrated} vs {}", cfg.threshold);
}

fn rms_refined(trials: &[Trial]) -> f64 {
    let e: Vec<f64> = trials
        .iter()
        .filter_map(Trial::refined_errors)
        .flat_map(|(a, b)| [a, b])
        .collect();
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

#[test]
fn bright_streaks_fall_inside_the_localization_area() {
    let bench = BenchConfig::new(vec![5.0], 40, 12);
    let cfg = bench.search_config().unwrap();
    for t in run_trials(&bench, &cfg, 5.0, 40).unwrap() {
        let area = t.area.expect("SNR 5 streak localized");
        let s = t.truth;
        assert!(area.rect.contains_point(s.x0, s.y0) && area.rect.contains_point(s.x1, s.y1), "{s:?} {area:?}");
        assert!(t.detected());
    }
}

#[test]
fn estimates_tighten_as_snr_grows() {
    let bench = BenchConfig::new(vec![1.0, 10.0], 200, 13);
    let cfg = bench.search_config().unwrap();
    let low = run_trials(&bench, &cfg, 1.0, 200).unwrap();
    let high = run_trials(&bench, &cfg, 10.0, 200).unwrap();
    assert!(high.iter().all(Trial::detected));
    let (a, b) = (rms_refined(&low), rms_refined(&high));
    assert!(b < a && b < 1.0, "rms {a} at SNR 1, {b} at SNR 10");
}

/// 512 × 512 frame, 70 px streak at SNR 1: detected with both ends within 10 px.
#[test]
fn faint_streak_in_a_large_frame() {
    let mut bench = BenchConfig::new(vec![1.0], 20, 14);
    bench.width = 512;
    bench.height = 512;
    bench.streak_len = 70.0;
    let cfg = bench.search_config().unwrap();
    let mut hits = 0;
    for r in 0..20 {
        let mut rng = RngStream::new(15, r);
        let truth = bench.random_streak(1.0, &mut rng).unwrap();
        let t = run_trial(&cfg, 512, 512, 1.0, truth, &mut rng).unwrap();
        if t.refined_errors().is_some_and(|(a, b)| a <= 10.0 && b <= 10.0) {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20 within 10 px");
}
