use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::profile::gaussian_run;
use super::{Frame, PixelRect, StreakParams, DEFAULT_PSF_WIDTH};
use crate::detectors::{FmaForm, FmaStart, Rule};
use crate::error::{domain, Result};
use crate::model::LlrModel;
use crate::montecarlo::{calibrate_threshold, CalibrationSpec};

/// Direction search and 2-D FMA parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Ω_S; directions run from its top border to its bottom border.
    pub search_area: PixelRect,
    #[serde(default = "defaults::direction_step")]
    pub direction_step: f64,
    /// N_d: window length in rows.
    #[serde(default = "defaults::window_len")]
    pub window_len: usize,
    /// K_d: window width in pixels per row.
    #[serde(default = "defaults::window_width")]
    pub window_width: usize,
    /// h̃, in the units of `R` (the frame's intensity units).
    pub threshold: f64,
    #[serde(default = "defaults::min_streak_len")]
    pub min_streak_len: usize,
    /// Largest `|Δx|` of a direction as a fraction of the Ω_S height.
    #[serde(default = "defaults::slope_cap")]
    pub slope_cap: f64,
    /// PSF width of the matched-filter template.
    #[serde(default = "defaults::psf_width")]
    pub psf_width: f64,
    /// Margin added around the swept window region to form Π₁.
    #[serde(default = "defaults::dilation")]
    pub dilation: usize,
    /// Below-threshold steps tolerated inside a run, so that a faint streak
    /// dipping under h̃ for a few steps still forms one run.
    #[serde(default = "defaults::max_gap")]
    pub max_gap: usize,
}

mod defaults {
    pub fn direction_step() -> f64 {
        0.5
    }
    pub fn window_len() -> usize {
        15
    }
    pub fn window_width() -> usize {
        8
    }
    pub fn min_streak_len() -> usize {
        20
    }
    pub fn slope_cap() -> f64 {
        0.25
    }
    pub fn psf_width() -> f64 {
        super::DEFAULT_PSF_WIDTH
    }
    pub fn dilation() -> usize {
        10
    }
    pub fn max_gap() -> usize {
        7
    }
}

/// Default per-step false-alarm probability used to set h̃.
pub const DEFAULT_STEP_ALPHA: f64 = 1e-3;

impl SearchConfig {
    pub fn new(search_area: PixelRect, threshold: f64) -> Self {
        Self {
            search_area,
            direction_step: defaults::direction_step(),
            window_len: defaults::window_len(),
            window_width: defaults::window_width(),
            threshold,
            min_streak_len: defaults::min_streak_len(),
            slope_cap: defaults::slope_cap(),
            psf_width: defaults::psf_width(),
            dilation: defaults::dilation(),
            max_gap: defaults::max_gap(),
        }
    }

    /// Ω_S as a full-height strip of `strip_width + 1` columns centered in the frame.
    pub fn central_strip(width: usize, height: usize, strip_width: usize) -> Result<PixelRect> {
        if strip_width >= width {
            return domain(format!("strip of {strip_width} px does not fit {width} px"));
        }
        let col0 = (width - 1 - strip_width) / 2;
        PixelRect::new(col0, 0, col0 + strip_width, height - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.window_width == 0 {
            return domain("window dimensions must be at least 1");
        }
        if self.window_len > self.search_area.height() {
            return domain(format!(
                "window of {} rows exceeds the search area height {}",
                self.window_len,
                self.search_area.height()
            ));
        }
        if !(self.direction_step > 0.0 && self.direction_step.is_finite()) {
            return domain("direction step must be positive");
        }
        if !(self.slope_cap >= 0.0) {
            return domain("slope cap must be nonnegative");
        }
        if !(self.psf_width > 0.0 && self.psf_width.is_finite()) {
            return domain("psf width must be positive");
        }
        if !self.threshold.is_finite() {
            return domain("threshold must be finite");
        }
        Ok(())
    }

    /// Shortest run that declares a streak: `min_streak_len - N_d` steps.
    pub fn min_run(&self) -> usize {
        self.min_streak_len.saturating_sub(self.window_len)
    }
}

/// A candidate streak line from `(x_top, y_top)` to `(x_bottom, y_bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub id: usize,
    pub x_top: f64,
    pub x_bottom: f64,
    pub y_top: f64,
    pub y_bottom: f64,
}

impl Direction {
    pub fn x_at(&self, y: f64) -> f64 {
        let span = self.y_bottom - self.y_top;
        if span == 0.0 {
            return self.x_top;
        }
        self.x_top + (y - self.y_top) / span * (self.x_bottom - self.x_top)
    }

    /// `cos` of the angle to the vertical.
    pub fn cos_tilt(&self) -> f64 {
        let dy = self.y_bottom - self.y_top;
        let dx = self.x_bottom - self.x_top;
        if dy == 0.0 {
            return 1.0;
        }
        dy / dx.hypot(dy)
    }
}

/// Every direction joining a grid point of the top border to a grid point of
/// the bottom border within the slope cap, ordered by top then bottom point.
pub fn enumerate_directions(cfg: &SearchConfig) -> Vec<Direction> {
    let area = &cfg.search_area;
    let span = (area.col1 - area.col0) as f64;
    let points = (span / cfg.direction_step + 1e-9).floor() as usize + 1;
    let xs: Vec<f64> = (0..points)
        .map(|a| area.col0 as f64 + a as f64 * cfg.direction_step)
        .collect();
    let cap = cfg.slope_cap * (area.row1 - area.row0) as f64;
    let mut out = Vec::new();
    for &top in &xs {
        for &bottom in &xs {
            if (bottom - top).abs() <= cap + 1e-9 {
                out.push(Direction {
                    id: out.len(),
                    x_top: top,
                    x_bottom: bottom,
                    y_top: area.row0 as f64,
                    y_bottom: area.row1 as f64,
                });
            }
        }
    }
    out
}

/// Statistic values of one direction.
///
/// Step `k` is indexed by the newest row of its window, so `values[i]` is
/// `R` for the window covering rows `first_step + i - N_d + 1 ..= first_step + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionTrace {
    pub direction: Direction,
    pub first_step: usize,
    pub values: Vec<f64>,
    /// Inclusive `(first, last)` steps of the above-threshold runs.
    pub runs: Vec<(usize, usize)>,
    /// Some window pixels fell outside the frame.
    pub truncated: bool,
}

impl DirectionTrace {
    pub fn last_step(&self) -> usize {
        self.first_step + self.values.len() - 1
    }

    pub fn value_at(&self, step: usize) -> Option<f64> {
        step.checked_sub(self.first_step)
            .and_then(|i| self.values.get(i).copied())
    }

    /// `(length, first, last)` of the longest run, the earliest one on ties.
    pub fn longest_run(&self) -> Option<(usize, usize, usize)> {
        let mut best: Option<(usize, usize, usize)> = None;
        for &(a, b) in &self.runs {
            let len = b - a + 1;
            if best.is_none_or(|(l, _, _)| len > l) {
                best = Some((len, a, b));
            }
        }
        best
    }
}

/// First column of the `K_d` pixels nearest to `x`.
fn first_column(x: f64, k: usize) -> i64 {
    (x - k as f64 / 2.0).ceil() as i64
}

/// Unit-energy cross-section weights of a row, written to `w` for columns `j0..j0 + K_d`.
///
/// The weights are the Gaussian line-spread values at the `K_d` pixels nearest
/// to the line, scaled to `Σ w² = 1`, so that under pure noise every row sum
/// is `N(0, σ²)` and `R` is `N(0, N_d σ²)`.
fn row_template(x: f64, cos_tilt: f64, cfg: &SearchConfig, w: &mut Vec<f64>) -> i64 {
    let k = cfg.window_width;
    let j0 = first_column(x, k);
    let inv = cos_tilt * cos_tilt / (2.0 * cfg.psf_width * cfg.psf_width);
    w.clear();
    gaussian_run(j0 as f64 - x, k, inv, w);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in w.iter_mut() {
        *v /= norm;
    }
    j0
}

/// Maximal runs of `values >= h`, merging runs separated by at most `max_gap` steps.
fn runs_above(values: &[f64], first_step: usize, h: f64, max_gap: usize) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v >= h, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, values.len() - 1));
    }
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for (a, b) in runs {
        match merged.last_mut() {
            Some(last) if a - last.1 - 1 <= max_gap => last.1 = b,
            _ => merged.push((a, b)),
        }
    }
    merged
        .into_iter()
        .map(|(a, b)| (a + first_step, b + first_step))
        .collect()
}

/// Slides the `N_d × K_d` matched-filter window down direction `d`, one row per step.
pub fn scan_direction(frame: &Frame, d: &Direction, cfg: &SearchConfig) -> Result<DirectionTrace> {
    cfg.validate()?;
    let area = &cfg.search_area;
    if !frame.bounds().contains(area) {
        return domain("search area exceeds the frame");
    }
    let cos = d.cos_tilt();
    let width = frame.width as i64;
    let mut truncated = false;
    let mut w = Vec::with_capacity(cfg.window_width);
    // prefix[r] = sum of the first r row values
    let mut prefix = Vec::with_capacity(area.height() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for r in area.row0..=area.row1 {
        let row = frame.row(r);
        let j0 = row_template(d.x_at(r as f64), cos, cfg, &mut w);
        let mut v = 0.0;
        for (a, wt) in w.iter().enumerate() {
            let j = j0 + a as i64;
            if j < 0 || j >= width {
                truncated = true;
            } else {
                v += wt * f64::from(row[j as usize]);
            }
        }
        acc += v;
        prefix.push(acc);
    }
    let n = cfg.window_len;
    let values: Vec<f64> = (n..prefix.len()).map(|i| prefix[i] - prefix[i - n]).collect();
    let first_step = area.row0 + n - 1;
    let runs = runs_above(&values, first_step, cfg.threshold, cfg.max_gap);
    Ok(DirectionTrace {
        direction: *d,
        first_step,
        values,
        runs,
        truncated,
    })
}

/// Scans every direction of `cfg` in parallel; traces are ordered by direction id.
pub fn scan_all(frame: &Frame, cfg: &SearchConfig) -> Result<Vec<DirectionTrace>> {
    enumerate_directions(cfg)
        .par_iter()
        .map(|d| scan_direction(frame, d, cfg))
        .collect()
}

/// The localization area Π₁ around the longest run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationArea {
    pub rect: PixelRect,
    pub direction: Direction,
    pub run_start: usize,
    pub run_end: usize,
    pub window_len: usize,
}

impl LocalizationArea {
    /// Steps lag the streak ends by half a window; these are the coarse end rows.
    pub fn coarse_rows(&self) -> (f64, f64) {
        let lag = (self.window_len as f64 - 1.0) / 2.0;
        (self.run_start as f64 - lag, self.run_end as f64 - lag)
    }

    /// Coarse streak on the detected direction, endpoints clamped into Π₁.
    pub fn coarse_streak(&self, amplitude: f64, psf_width: f64) -> StreakParams {
        let (y0, y1) = self.coarse_rows();
        let (x0, y0) = self.rect.clamp(self.direction.x_at(y0), y0);
        let (x1, y1) = self.rect.clamp(self.direction.x_at(y1), y1);
        StreakParams {
            x0,
            y0,
            x1,
            y1,
            amplitude,
            psf_width,
        }
    }
}

/// Picks the direction with the longest above-threshold run (lowest id on ties).
///
/// Returns `None` when no run reaches `min_streak_len - N_d` steps. Π₁ is
/// the region swept by the windows of the run, dilated and clipped to Ω_S.
pub fn localize(traces: &[DirectionTrace], cfg: &SearchConfig) -> Option<LocalizationArea> {
    let mut best: Option<(usize, &DirectionTrace, usize, usize)> = None;
    for t in traces {
        if let Some((len, a, b)) = t.longest_run() {
            let better = match best {
                None => true,
                Some((l, bt, _, _)) => len > l || (len == l && t.direction.id < bt.direction.id),
            };
            if better {
                best = Some((len, t, a, b));
            }
        }
    }
    let (len, trace, a, b) = best?;
    if len < cfg.min_run().max(1) {
        return None;
    }
    let d = &trace.direction;
    let top = a + 1 - cfg.window_len;
    let k = cfg.window_width as i64;
    let (mut c0, mut c1) = (i64::MAX, i64::MIN);
    for r in [top, b] {
        let j = first_column(d.x_at(r as f64), cfg.window_width);
        c0 = c0.min(j);
        c1 = c1.max(j + k - 1);
    }
    let area = &cfg.search_area;
    let c0 = c0.clamp(area.col0 as i64, area.col1 as i64) as usize;
    let c1 = c1.clamp(area.col0 as i64, area.col1 as i64) as usize;
    let swept = PixelRect {
        col0: c0,
        row0: top,
        col1: c1,
        row1: b,
    };
    Some(LocalizationArea {
        rect: swept.dilate_within(cfg.dilation, area),
        direction: *d,
        run_start: a,
        run_end: b,
        window_len: cfg.window_len,
    })
}

/// Scan and localize.
pub fn detect(frame: &Frame, cfg: &SearchConfig) -> Result<Option<LocalizationArea>> {
    Ok(localize(&scan_all(frame, cfg)?, cfg))
}

/// `h̃ = σ √N_d Φ⁻¹(1 - α)`, the exact per-step level of the unit-energy filter.
pub fn analytic_threshold(sigma: f64, window_len: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha {alpha} outside (0,1)"));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha);
    Ok(sigma * (window_len as f64).sqrt() * z)
}

/// h̃ with per-step false-alarm probability `alpha` by Monte Carlo.
///
/// Under pure noise each row sum of the filter is `N(0, σ²)`, so one step of
/// the scan is a full FMA window of `N_d` Gaussian observations. The level is
/// calibrated as a warm-started FMA with `m = 1` and rescaled by `σ`.
pub fn calibrate_scan_threshold(
    sigma: f64,
    window_len: usize,
    alpha: f64,
    replications: u64,
    seed: u64,
) -> Result<f64> {
    let rule = Rule::Fma {
        window: window_len,
        form: FmaForm::Statistic,
        start: FmaStart::Warm,
    };
    let model = LlrModel::gaussian(1.0, sigma)?;
    let spec = CalibrationSpec::new(alpha, 1, replications, seed);
    Ok(sigma * calibrate_threshold(&rule, &spec, &model)?.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streak::synth_frame;
    use crate::rng::RngStream;

    fn cfg(col0: usize, col1: usize, rows: usize) -> SearchConfig {
        SearchConfig::new(PixelRect::new(col0, 0, col1, rows - 1).unwrap(), 1.0)
    }

    #[test]
    fn degenerate_area_gives_the_vertical() {
        let d = enumerate_directions(&cfg(5, 5, 40));
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].x_top, d[0].x_bottom), (5.0, 5.0));
    }

    #[test]
    fn directions_respect_borders_and_cap() {
        let mut c = cfg(0, 20, 41);
        c.slope_cap = 0.1;
        let ds = enumerate_directions(&c);
        let g = 41;
        assert!(ds.len() <= g * g);
        for (i, d) in ds.iter().enumerate() {
            assert_eq!(d.id, i);
            assert_eq!((d.y_top, d.y_bottom), (0.0, 40.0));
            assert!((0.0..=20.0).contains(&d.x_top) && (0.0..=20.0).contains(&d.x_bottom));
            assert!((d.x_bottom - d.x_top).abs() <= 4.0 + 1e-9);
            assert_eq!((d.x_top * 2.0).fract(), 0.0);
        }
        // |Δx| <= 4 allows 9 grid offsets either side
        let expected: usize = (0..g as i64)
            .map(|a| (0..g as i64).filter(|b| (a - b).abs() <= 8).count())
            .sum();
        assert_eq!(ds.len(), expected);
    }

    #[test]
    fn nearest_columns() {
        assert_eq!(first_column(10.3, 8), 7);
        assert_eq!(first_column(10.3, 1), 10);
        assert_eq!(first_column(10.3, 3), 9);
        let mut w = Vec::new();
        assert_eq!(row_template(10.0, 1.0, &cfg(0, 20, 20), &mut w), 6);
        let e: f64 = w.iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn runs_and_gaps() {
        let v = [0.0, 2.0, 2.0, 0.0, 2.0, 0.0, 0.0, 2.0];
        assert_eq!(runs_above(&v, 10, 1.0, 0), vec![(11, 12), (14, 14), (17, 17)]);
        assert_eq!(runs_above(&v, 10, 1.0, 1), vec![(11, 14), (17, 17)]);
        assert_eq!(runs_above(&v, 0, 1.0, 2), vec![(1, 7)]);
    }

    #[test]
    fn empty_traces_localize_nothing() {
        let c = cfg(0, 10, 40);
        assert_eq!(localize(&[], &c), None);
        let f = synth_frame(11, 40, None, 1.0, &mut RngStream::new(1, 0)).unwrap();
        let mut quiet = c.clone();
        quiet.threshold = 1e9;
        assert!(detect(&f, &quiet).unwrap().is_none());
    }

    #[test]
    fn ties_go_to_the_lowest_id() {
        let c = cfg(0, 10, 40);
        let ds = enumerate_directions(&c);
        let trace = |d: &Direction| DirectionTrace {
            direction: *d,
            first_step: 14,
            values: vec![0.0; 26],
            runs: vec![(20, 30)],
            truncated: false,
        };
        let traces = vec![trace(&ds[7]), trace(&ds[3]), trace(&ds[5])];
        assert_eq!(localize(&traces, &c).unwrap().direction.id, 3);
    }

    #[test]
    fn analytic_threshold_value() {
        let h = analytic_threshold(2.0, 15, 1e-3).unwrap();
        assert!((h - 2.0 * 15f64.sqrt() * 3.090232306167813).abs() < 1e-9);
    }
}
