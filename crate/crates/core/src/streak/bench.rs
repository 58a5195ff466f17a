use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_scan_threshold, detect, refine_ml, synth_frame, LocalizationArea, PixelRect,
    SearchConfig, StreakEstimate, StreakParams, DEFAULT_PSF_WIDTH,
};
use crate::error::{domain, Error, Result};
use crate::rng::{derive_seed, RngStream};

/// Endpoint-accuracy benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub snrs: Vec<f64>,
    pub trials: u64,
    #[serde(default = "BenchConfig::default_streak_len")]
    pub streak_len: f64,
    pub width: usize,
    pub height: usize,
    /// Ω_S is a full-height central strip this many pixels wide.
    pub strip_width: usize,
    #[serde(default = "BenchConfig::default_sigma")]
    pub sigma: f64,
    #[serde(default = "BenchConfig::default_psf_width")]
    pub psf_width: f64,
    /// Per-step false-alarm probability of the scan.
    #[serde(default = "BenchConfig::default_step_alpha")]
    pub step_alpha: f64,
    /// h̃; calibrated from `step_alpha` when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Streak lines keep this distance from the sides of Ω_S.
    #[serde(default = "BenchConfig::default_margin")]
    pub margin: f64,
    #[serde(default = "BenchConfig::default_bootstrap")]
    pub bootstrap_resamples: u32,
    pub seed: u64,
}

/// Fewest trials per SNR point accepted by [`bench_sd_vs_snr`].
pub const MIN_TRIALS: u64 = 1000;

impl BenchConfig {
    pub fn new(snrs: Vec<f64>, trials: u64, seed: u64) -> Self {
        Self {
            snrs,
            trials,
            streak_len: Self::default_streak_len(),
            width: 64,
            height: 128,
            strip_width: 16,
            sigma: Self::default_sigma(),
            psf_width: Self::default_psf_width(),
            step_alpha: Self::default_step_alpha(),
            threshold: None,
            margin: Self::default_margin(),
            bootstrap_resamples: Self::default_bootstrap(),
            seed,
        }
    }

    fn default_streak_len() -> f64 {
        50.0
    }
    fn default_sigma() -> f64 {
        1.0
    }
    fn default_psf_width() -> f64 {
        DEFAULT_PSF_WIDTH
    }
    fn default_step_alpha() -> f64 {
        super::scan::DEFAULT_STEP_ALPHA
    }
    fn default_margin() -> f64 {
        4.0
    }
    fn default_bootstrap() -> u32 {
        200
    }

    pub fn validate(&self) -> Result<()> {
        if self.snrs.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return domain("SNR values must be nonnegative");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return domain("sigma must be positive");
        }
        let area = self.search_area()?;
        if 2.0 * self.margin > (area.col1 - area.col0) as f64 {
            return domain("margin leaves no room for streak lines");
        }
        if self.streak_len < 1.0 || self.streak_len + 2.0 > (area.row1 - area.row0) as f64 {
            return domain(format!(
                "streak length {} does not fit a frame of height {}",
                self.streak_len, self.height
            ));
        }
        Ok(())
    }

    pub fn search_area(&self) -> Result<PixelRect> {
        SearchConfig::central_strip(self.width, self.height, self.strip_width)
    }

    /// Search configuration with h̃ resolved (calibrated if not given).
    pub fn search_config(&self) -> Result<SearchConfig> {
        let area = self.search_area()?;
        let mut cfg = SearchConfig::new(area, 0.0);
        cfg.psf_width = self.psf_width;
        cfg.threshold = match self.threshold {
            Some(h) => h,
            None => calibrate_scan_threshold(
                self.sigma,
                cfg.window_len,
                self.step_alpha,
                (200.0 / self.step_alpha).ceil() as u64,
                derive_seed(self.seed, "scan-threshold"),
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A random near-vertical streak of `streak_len` px at amplitude `snr·σ`.
    ///
    /// The streak lies on a line crossing Ω_S from top to bottom at least
    /// `margin` px inside its sides, at a uniform position along that line.
    pub fn random_streak<R: Rng + ?Sized>(&self, snr: f64, rng: &mut R) -> Result<StreakParams> {
        let area = self.search_area()?;
        let (lo, hi) = (area.col0 as f64 + self.margin, area.col1 as f64 - self.margin);
        let (top, bottom) = (area.row0 as f64, area.row1 as f64);
        let x_top = rng.random_range(lo..=hi);
        let x_bottom = rng.random_range(lo..=hi);
        let (dx, dy) = (x_bottom - x_top, bottom - top);
        let line_len = dx.hypot(dy);
        let t0 = rng.random_range(0.0..=(line_len - self.streak_len)) / line_len;
        let t1 = t0 + self.streak_len / line_len;
        StreakParams::new(
            x_top + t0 * dx,
            top + t0 * dy,
            x_top + t1 * dx,
            top + t1 * dy,
            snr * self.sigma,
            self.psf_width,
        )
    }
}

/// Outcome of one synthesize → scan → localize → refine trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub truth: StreakParams,
    pub area: Option<LocalizationArea>,
    pub coarse: Option<StreakParams>,
    pub estimate: Option<StreakEstimate>,
}

fn endpoint_errors(truth: &StreakParams, est: &StreakParams) -> (f64, f64) {
    let t = truth.canonical();
    let e = est.canonical();
    (
        (e.x0 - t.x0).hypot(e.y0 - t.y0),
        (e.x1 - t.x1).hypot(e.y1 - t.y1),
    )
}

impl Trial {
    /// A streak was localized and its refined amplitude is positive.
    pub fn detected(&self) -> bool {
        self.estimate.is_some()
    }

    /// Distances of the coarse start and end points to the truth.
    pub fn coarse_errors(&self) -> Option<(f64, f64)> {
        self.coarse.map(|c| endpoint_errors(&self.truth, &c))
    }

    /// Distances of the refined start and end points to the truth.
    pub fn refined_errors(&self) -> Option<(f64, f64)> {
        self.estimate
            .map(|e| endpoint_errors(&self.truth, &e.streak(self.truth.psf_width)))
    }
}

/// Runs one trial on `width × height` noise with `streak` superimposed (if its amplitude is positive).
pub fn run_trial(
    cfg: &SearchConfig,
    width: usize,
    height: usize,
    sigma: f64,
    truth: StreakParams,
    rng: &mut RngStream,
) -> Result<Trial> {
    let rendered = (truth.amplitude > 0.0).then_some(&truth);
    let frame = synth_frame(width, height, rendered, sigma, rng)?;
    let area = detect(&frame, cfg)?;
    let coarse = area.map(|a| a.coarse_streak(1.0, cfg.psf_width));
    let estimate = match (&area, &coarse) {
        (Some(a), Some(c)) => match refine_ml(&frame, a, c, cfg.psf_width) {
            Ok(e) => Some(e),
            Err(Error::Rejected(_)) => None,
            Err(e) => return Err(e),
        },
        _ => None,
    };
    Ok(Trial {
        truth,
        area,
        coarse,
        estimate,
    })
}

/// Trials of one SNR point; trial `r` uses its own random stream.
pub fn run_trials(bench: &BenchConfig, cfg: &SearchConfig, snr: f64, trials: u64) -> Result<Vec<Trial>> {
    let seed = derive_seed(bench.seed, &format!("snr={snr}"));
    (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r);
            let truth = bench.random_streak(snr, &mut rng)?;
            run_trial(cfg, bench.width, bench.height, bench.sigma, truth, &mut rng)
        })
        .collect()
}

/// One row of the SD-versus-SNR curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub snr: f64,
    pub trials: u64,
    pub detect_rate: f64,
    /// Root-mean-square distance of the estimated start point to the true one, over detections.
    pub sd_start: f64,
    pub sd_end: f64,
    /// Bootstrap standard errors of `sd_start` and `sd_end`.
    pub se_sd_start: f64,
    pub se_sd_end: f64,
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
}

fn bootstrap_se(v: &[f64], resamples: u32, rng: &mut RngStream) -> f64 {
    if v.len() < 2 || resamples < 2 {
        return f64::NAN;
    }
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let draw: Vec<f64> = (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect();
            rms(&draw)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    (stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (stats.len() - 1) as f64).sqrt()
}

/// Summarizes the trials of one SNR point.
pub fn summarize(snr: f64, trials: &[Trial], resamples: u32, seed: u64) -> BenchPoint {
    let errors: Vec<(f64, f64)> = trials.iter().filter_map(Trial::refined_errors).collect();
    let starts: Vec<f64> = errors.iter().map(|e| e.0).collect();
    let ends: Vec<f64> = errors.iter().map(|e| e.1).collect();
    let mut rng = RngStream::new(derive_seed(seed, &format!("bootstrap snr={snr}")), 0);
    BenchPoint {
        snr,
        trials: trials.len() as u64,
        detect_rate: errors.len() as f64 / trials.len() as f64,
        sd_start: rms(&starts),
        sd_end: rms(&ends),
        se_sd_start: bootstrap_se(&starts, resamples, &mut rng),
        se_sd_end: bootstrap_se(&ends, resamples, &mut rng),
    }
}

/// Endpoint error and detection rate for every SNR of `bench.snrs`.
pub fn bench_sd_vs_snr(bench: &BenchConfig) -> Result<Vec<BenchPoint>> {
    bench.validate()?;
    if bench.trials < MIN_TRIALS {
        return domain(format!(
            "{} trials per SNR point, at least {MIN_TRIALS} needed",
            bench.trials
        ));
    }
    let cfg = bench.search_config()?;
    bench
        .snrs
        .iter()
        .map(|&snr| {
            let trials = run_trials(bench, &cfg, snr, bench.trials)?;
            Ok(summarize(snr, &trials, bench.bootstrap_resamples, bench.seed))
        })
        .collect()
}

/// Writes the curve as CSV with a header row.
pub fn write_bench_csv<W: Write>(points: &[BenchPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_streaks_fit_the_strip() {
        let b = BenchConfig::new(vec![1.0], 1000, 4);
        let area = b.search_area().unwrap();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..200 {
            let s = b.random_streak(2.0, &mut rng).unwrap();
            assert!((s.length() - 50.0).abs() < 1e-9);
            assert!(area.contains_point(s.x0, s.y0) && area.contains_point(s.x1, s.y1));
            assert!(s.x0 >= area.col0 as f64 + 4.0 && s.x1 <= area.col1 as f64 - 4.0 + 1e-9);
            assert_eq!(s.amplitude, 2.0);
        }
    }

    #[test]
    fn csv_header() {
        let p = BenchPoint {
            snr: 1.0,
            trials: 10,
            detect_rate: 0.5,
            sd_start: 1.0,
            sd_end: 2.0,
            se_sd_start: 0.1,
            se_sd_end: 0.2,
        };
        let mut buf = Vec::new();
        write_bench_csv(&[p], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("snr,trials,detect_rate,sd_start,sd_end,se_sd_start,se_sd_end\n"));
    }

    #[test]
    fn too_few_trials() {
        let b = BenchConfig::new(vec![1.0], 10, 4);
        assert!(bench_sd_vs_snr(&b).is_err());
    }

    #[test]
    fn rms_and_bootstrap() {
        assert_eq!(rms(&[3.0, 4.0, 0.0, 0.0]), 2.5);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(bootstrap_se(&[2.0; 50], 100, &mut rng), 0.0);
    }
}
