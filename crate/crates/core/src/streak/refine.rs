use std::cell::Cell;

use serde::{Deserialize, Serialize};

use super::{render_profile, Frame, LocalizationArea, PixelRect, StreakParams};
use crate::error::{domain, Error, Result};

/// Maximum-likelihood streak estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreakEstimate {
    pub x0_hat: f64,
    pub y0_hat: f64,
    pub x1_hat: f64,
    pub y1_hat: f64,
    pub a_hat: f64,
    /// `Σ (Y - Â S)²` over Π₁.
    pub residual_ss: f64,
    pub evaluations: u32,
}

impl StreakEstimate {
    pub fn endpoints(&self) -> [f64; 4] {
        [self.x0_hat, self.y0_hat, self.x1_hat, self.y1_hat]
    }

    pub fn streak(&self, psf_width: f64) -> StreakParams {
        StreakParams {
            x0: self.x0_hat,
            y0: self.y0_hat,
            x1: self.x1_hat,
            y1: self.y1_hat,
            amplitude: self.a_hat,
            psf_width,
        }
    }
}

/// Smallest and largest step of the coordinate search, px.
pub const START_STEP: f64 = 2.0;
pub const STOP_STEP: f64 = 0.05;
const MAX_EVALUATIONS: u32 = 20_000;

/// `(Â(X), Σ(Y - Â S)²)` over `rect`, with `Â = ΣYS / ΣS²` profiled out.
///
/// The residual is computed as `ΣY² - (ΣYS)²/ΣS²`.
pub fn profiled_objective(frame: &Frame, rect: &PixelRect, streak: &StreakParams) -> Result<(f64, f64)> {
    let p = render_profile(streak, rect)?;
    let (mut syy, mut sys, mut sss) = (0.0, 0.0, 0.0);
    for row in rect.row0..=rect.row1 {
        let y = &frame.row(row)[rect.col0..=rect.col1];
        let s = &p.values[(row - rect.row0) * rect.width()..][..rect.width()];
        for (&yv, &sv) in y.iter().zip(s) {
            let yv = f64::from(yv);
            syy += yv * yv;
            sys += yv * sv;
            sss += sv * sv;
        }
    }
    if sss == 0.0 {
        return Ok((0.0, syy));
    }
    let a = sys / sss;
    Ok((a, (syy - a * sys).max(0.0)))
}

fn clamp_into(rect: &PixelRect, p: [f64; 4]) -> [f64; 4] {
    let (x0, y0) = rect.clamp(p[0], p[1]);
    let (x1, y1) = rect.clamp(p[2], p[3]);
    [x0, y0, x1, y1]
}

/// Refines the endpoints inside Π₁ by minimizing `Σ(Y - Â S(X))²`.
///
/// Coordinate descent: each endpoint coordinate is moved by `±step` while
/// that lowers the objective; when no move helps the step is halved, from
/// [`START_STEP`] down to [`STOP_STEP`]. Moves leaving Π₁ are projected back,
/// moves with `Â <= 0` are rejected.
pub fn refine_ml(
    frame: &Frame,
    area: &LocalizationArea,
    init: &StreakParams,
    psf_width: f64,
) -> Result<StreakEstimate> {
    let rect = area.rect;
    if !frame.bounds().contains(&rect) {
        return domain("localization area exceeds the frame");
    }
    let template = StreakParams {
        amplitude: 1.0,
        psf_width,
        ..*init
    };
    let mut p = clamp_into(&rect, init.endpoints());
    let evaluations = Cell::new(0u32);
    let eval = |q: [f64; 4]| -> Result<Option<(f64, f64)>> {
        let s = template.with_endpoints(q);
        if s.length() < 1.0 {
            return Ok(None);
        }
        evaluations.set(evaluations.get() + 1);
        let (a, rss) = profiled_objective(frame, &rect, &s)?;
        Ok((a > 0.0).then_some((a, rss)))
    };
    let mut best = eval(p)?;
    let mut step = START_STEP;
    while step >= STOP_STEP {
        let mut improved = false;
        for c in 0..4 {
            for sign in [1.0, -1.0] {
                let mut q = p;
                q[c] += sign * step;
                let q = clamp_into(&rect, q);
                if q == p {
                    continue;
                }
                if let Some(cand) = eval(q)? {
                    if best.is_none_or(|b| cand.1 < b.1) {
                        p = q;
                        best = Some(cand);
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
        if evaluations.get() >= MAX_EVALUATIONS {
            break;
        }
    }
    let (a_hat, residual_ss) = best.ok_or_else(|| {
        Error::Rejected("no endpoint placement in the localization area has positive amplitude".into())
    })?;
    Ok(StreakEstimate {
        x0_hat: p[0],
        y0_hat: p[1],
        x1_hat: p[2],
        y1_hat: p[3],
        a_hat,
        residual_ss,
        evaluations: evaluations.get(),
    })
}
