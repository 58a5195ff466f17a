use serde::{Deserialize, Serialize};

use super::{PixelRect, StreakParams};
use crate::error::{domain, Result};

/// Sub-pixel samples per pixel of segment length.
pub const SAMPLES_PER_PX: f64 = 8.0;

/// PSF support radius in units of the PSF width; pixels farther from the segment are exactly 0.
pub const SUPPORT_WIDTHS: f64 = 6.0;

/// A rendered profile restricted to a rectangle, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub rect: PixelRect,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        if !self.rect.contains_point(col as f64, row as f64) {
            return 0.0;
        }
        self.values[(row - self.rect.row0) * self.rect.width() + (col - self.rect.col0)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Unnormalized line integral of the Gaussian PSF over a bounding box, by
/// trapezoidal sampling along the segment.
struct Canvas {
    col0: i64,
    row0: i64,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

/// Appends `exp(-(d0 + a)² c)` for `a = 0..n`, using two exponentials and a ratio recurrence.
pub(crate) fn gaussian_run(d0: f64, n: usize, c: f64, out: &mut Vec<f64>) {
    let mut g = (-d0 * d0 * c).exp();
    let mut ratio = (-(2.0 * d0 + 1.0) * c).exp();
    let q = (-2.0 * c).exp();
    for _ in 0..n {
        out.push(g);
        g *= ratio;
        ratio *= q;
    }
}

fn splat(streak: &StreakParams) -> Canvas {
    let w = streak.psf_width;
    let radius = SUPPORT_WIDTHS * w;
    let reach = radius.ceil() as i64 + 1;
    let col0 = streak.x0.min(streak.x1).floor() as i64 - reach;
    let row0 = streak.y0.min(streak.y1).floor() as i64 - reach;
    let col1 = streak.x0.max(streak.x1).ceil() as i64 + reach;
    let row1 = streak.y0.max(streak.y1).ceil() as i64 + reach;
    let width = (col1 - col0 + 1) as usize;
    let height = (row1 - row0 + 1) as usize;
    let mut values = vec![0.0; width * height];

    let len = streak.length();
    let n = (len * SAMPLES_PER_PX).ceil() as usize + 1;
    let inv2w2 = 1.0 / (2.0 * w * w);
    let r2 = radius * radius;
    let mut wx = Vec::new();
    let mut wy = Vec::new();
    for s in 0..n {
        let t = s as f64 / (n - 1) as f64;
        let weight = if s == 0 || s == n - 1 { 0.5 } else { 1.0 };
        let px = streak.x0 + t * (streak.x1 - streak.x0);
        let py = streak.y0 + t * (streak.y1 - streak.y0);
        let jc0 = (px - radius).ceil() as i64;
        let jc1 = (px + radius).floor() as i64;
        let ir0 = (py - radius).ceil() as i64;
        let ir1 = (py + radius).floor() as i64;
        wx.clear();
        wy.clear();
        gaussian_run(jc0 as f64 - px, (jc1 - jc0 + 1).max(0) as usize, inv2w2, &mut wx);
        gaussian_run(ir0 as f64 - py, (ir1 - ir0 + 1).max(0) as usize, inv2w2, &mut wy);
        let dy0 = ir0 as f64 - py;
        let dx0 = jc0 as f64 - px;
        for (di, &gy) in wy.iter().enumerate() {
            let dy = dy0 + di as f64;
            let gy = weight * gy;
            let row = (ir0 + di as i64 - row0) as usize * width;
            for (dj, &gx) in wx.iter().enumerate() {
                let dx = dx0 + dj as f64;
                if dx * dx + dy * dy <= r2 {
                    values[row + (jc0 + dj as i64 - col0) as usize] += gx * gy;
                }
            }
        }
    }
    Canvas {
        col0,
        row0,
        width,
        height,
        values,
    }
}

/// Peak-normalized streak profile `S(X)` on the pixels of `region`.
///
/// Each pixel holds the line integral of a unit-height Gaussian PSF along the
/// segment, sampled at least 8 times per pixel of length, divided by the
/// largest pixel value of the whole streak (not just of `region`).
pub fn render_profile(streak: &StreakParams, region: &PixelRect) -> Result<Profile> {
    if streak.length() == 0.0 {
        return domain("zero-length segment");
    }
    streak.validate()?;
    let canvas = splat(streak);
    let peak = canvas.values.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return domain("profile vanishes on the pixel grid");
    }
    let mut values = vec![0.0; region.area()];
    for row in region.row0..=region.row1 {
        let ci = row as i64 - canvas.row0;
        if ci < 0 || ci >= canvas.height as i64 {
            continue;
        }
        let src = ci as usize * canvas.width;
        let dst = (row - region.row0) * region.width();
        for col in region.col0..=region.col1 {
            let cj = col as i64 - canvas.col0;
            if cj < 0 || cj >= canvas.width as i64 {
                continue;
            }
            values[dst + col - region.col0] = canvas.values[src + cj as usize] / peak;
        }
    }
    Ok(Profile {
        rect: *region,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vertical(col: f64, top: f64, bottom: f64) -> StreakParams {
        StreakParams::new(col, top, col, bottom, 1.0, 1.0).unwrap()
    }

    #[test]
    fn gaussian_run_matches_direct_evaluation() {
        let mut out = Vec::new();
        gaussian_run(-6.3, 13, 0.5, &mut out);
        for (a, g) in out.iter().enumerate() {
            let d = -6.3 + a as f64;
            assert_relative_eq!(*g, (-d * d * 0.5).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn peak_is_one_and_far_pixels_vanish() {
        let s = vertical(20.0, 10.0, 40.0);
        let p = render_profile(&s, &PixelRect::full(41, 51)).unwrap();
        assert_relative_eq!(p.max(), 1.0, epsilon = 1e-15);
        for row in 0..51 {
            for col in 0..41 {
                let dy = if row < 10 { 10.0 - row as f64 } else if row > 40 { row as f64 - 40.0 } else { 0.0 };
                let d = (col as f64 - 20.0).hypot(dy);
                if d > 6.0 {
                    assert!(p.get(row, col).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn symmetric_about_the_column() {
        let s = vertical(15.0, 5.0, 35.0);
        let p = render_profile(&s, &PixelRect::full(31, 41)).unwrap();
        for row in 0..41 {
            for d in 1..8 {
                assert!((p.get(row, 15 - d) - p.get(row, 15 + d)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalization_uses_the_whole_streak() {
        let s = vertical(15.0, 5.0, 35.0);
        let corner = PixelRect::new(0, 0, 3, 3).unwrap();
        let p = render_profile(&s, &corner).unwrap();
        assert!(p.max() < 1e-6);
    }
}
