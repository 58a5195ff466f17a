//! Faint linear streak detection in 2-D frames.
//!
//! Pixel `(row i, column j)` has its center at `(x = j, y = i)`. A frame is
//! `Y = A·S(X) + ε` with `S` the peak-normalized profile of the segment
//! `X = (x0, y0, x1, y1)` and `ε` i.i.d. `N(0, σ²)`, so the SNR is `A/σ`.
//!
//! Detection scans near-vertical directions with a sliding matched-filter
//! window (a 2-D FMA), localizes the longest above-threshold run, and then
//! refines the endpoints by maximum likelihood inside the localization area.

pub mod bench;
pub mod frame;
pub mod profile;
pub mod refine;
pub mod scan;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub use bench::{
    bench_sd_vs_snr, run_trial, run_trials, summarize, write_bench_csv, BenchConfig, BenchPoint,
    Trial,
};
pub use frame::{read_frame, sidecar_path, synth_frame, write_frame, write_pgm, Frame};
pub use profile::{render_profile, Profile};
pub use refine::{profiled_objective, refine_ml, StreakEstimate};
pub use scan::{
    analytic_threshold, calibrate_scan_threshold, detect, enumerate_directions, localize,
    scan_all, scan_direction, Direction, DirectionTrace, LocalizationArea, SearchConfig,
};

/// Inclusive pixel rectangle: columns `col0..=col1`, rows `row0..=row1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub col0: usize,
    pub row0: usize,
    pub col1: usize,
    pub row1: usize,
}

impl PixelRect {
    pub fn new(col0: usize, row0: usize, col1: usize, row1: usize) -> Result<Self> {
        if col0 > col1 || row0 > row1 {
            return domain(format!(
                "empty rectangle cols {col0}..={col1}, rows {row0}..={row1}"
            ));
        }
        Ok(Self {
            col0,
            row0,
            col1,
            row1,
        })
    }

    /// The whole `width × height` frame.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            col0: 0,
            row0: 0,
            col1: width - 1,
            row1: height - 1,
        }
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0 + 1
    }

    pub fn height(&self) -> usize {
        self.row1 - self.row0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.col0 as f64 && x <= self.col1 as f64 && y >= self.row0 as f64 && y <= self.row1 as f64
    }

    pub fn contains(&self, other: &PixelRect) -> bool {
        other.col0 >= self.col0
            && other.col1 <= self.col1
            && other.row0 >= self.row0
            && other.row1 <= self.row1
    }

    /// Intersection, `None` when disjoint.
    pub fn intersect(&self, other: &PixelRect) -> Option<PixelRect> {
        let r = PixelRect {
            col0: self.col0.max(other.col0),
            row0: self.row0.max(other.row0),
            col1: self.col1.min(other.col1),
            row1: self.row1.min(other.row1),
        };
        (r.col0 <= r.col1 && r.row0 <= r.row1).then_some(r)
    }

    /// Grown by `by` pixels on every side, then clipped to `bounds`.
    pub fn dilate_within(&self, by: usize, bounds: &PixelRect) -> PixelRect {
        PixelRect {
            col0: self.col0.saturating_sub(by).max(bounds.col0),
            row0: self.row0.saturating_sub(by).max(bounds.row0),
            col1: (self.col1 + by).min(bounds.col1),
            row1: (self.row1 + by).min(bounds.row1),
        }
    }

    /// Clamp a point into the rectangle.
    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x.clamp(self.col0 as f64, self.col1 as f64),
            y.clamp(self.row0 as f64, self.row1 as f64),
        )
    }
}

/// A linear streak: segment endpoints, peak amplitude and Gaussian PSF width (σ of the PSF, px).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub psf_width: f64,
}

pub const DEFAULT_PSF_WIDTH: f64 = 1.0;

impl StreakParams {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, amplitude: f64, psf_width: f64) -> Result<Self> {
        let s = Self {
            x0,
            y0,
            x1,
            y1,
            amplitude,
            psf_width,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.x0, self.y0, self.x1, self.y1].iter().any(|v| !v.is_finite()) {
            return domain("streak endpoints must be finite");
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return domain(format!("amplitude {} must be nonnegative", self.amplitude));
        }
        if !(self.psf_width > 0.0 && self.psf_width.is_finite()) {
            return domain(format!("psf width {} must be positive", self.psf_width));
        }
        if self.length() < 1.0 {
            return domain(format!("streak length {} below 1 px", self.length()));
        }
        Ok(())
    }

    /// Checks the endpoints lie inside a `width × height` frame.
    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        let full = PixelRect::full(width, height);
        if !full.contains_point(self.x0, self.y0) || !full.contains_point(self.x1, self.y1) {
            return domain("streak endpoints outside the frame");
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    pub fn with_endpoints(&self, p: [f64; 4]) -> Self {
        Self {
            x0: p[0],
            y0: p[1],
            x1: p[2],
            y1: p[3],
            ..*self
        }
    }

    pub fn endpoints(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Same segment with the endpoints ordered so that `y0 <= y1`.
    pub fn canonical(&self) -> Self {
        if self.y0 <= self.y1 {
            *self
        } else {
            self.with_endpoints([self.x1, self.y1, self.x0, self.y0])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_operations() {
        let r = PixelRect::new(10, 20, 19, 39).unwrap();
        assert_eq!((r.width(), r.height(), r.area()), (10, 20, 200));
        let bounds = PixelRect::full(25, 100);
        let d = r.dilate_within(10, &bounds);
        assert_eq!(d, PixelRect::new(0, 10, 24, 49).unwrap());
        assert!(bounds.contains(&d));
        assert!(PixelRect::new(3, 0, 2, 0).is_err());
        assert_eq!(r.intersect(&PixelRect::new(0, 0, 5, 5).unwrap()), None);
        assert_eq!(r.clamp(0.0, 100.0), (10.0, 39.0));
    }

    #[test]
    fn streak_validation() {
        assert!(StreakParams::new(0.0, 0.0, 0.0, 0.5, 1.0, 1.0).is_err());
        assert!(StreakParams::new(0.0, 0.0, 0.0, 5.0, -1.0, 1.0).is_err());
        assert!(StreakParams::new(0.0, 0.0, 0.0, 5.0, 1.0, 0.0).is_err());
        let s = StreakParams::new(5.0, 9.0, 6.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(s.canonical().endpoints(), [6.0, 2.0, 5.0, 9.0]);
        assert!(s.check_inside(10, 10).is_ok());
        assert!(s.check_inside(6, 6).is_err());
    }
}
