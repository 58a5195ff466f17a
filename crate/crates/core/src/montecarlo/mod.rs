//! Monte Carlo calibration and evaluation of stopping rules.
//!
//! Every replication `r` draws from its own [`RngStream`]`(seed, r)`, and
//! results are aggregated as integer counts, so estimates are identical for
//! any rayon thread count.

mod calibrate;
pub mod tables;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{AnyDetector, Detector, FmaStart, IncrementMap, Rule};
use crate::error::{domain, Result};
use crate::model::{DurationLaw, LlrModel, Regime};
use crate::rng::RngStream;

pub use calibrate::{calibrate_threshold, max_statistics, Calibration, CalibrationCache};

/// A binomial proportion with its standard error (used for PD and LPFA alike).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdEstimate {
    pub pd_hat: f64,
    pub std_error: f64,
    pub replications: u64,
}

impl PdEstimate {
    pub fn from_counts(hits: u64, replications: u64) -> Self {
        if replications == 0 {
            return Self {
                pd_hat: 0.0,
                std_error: 0.0,
                replications,
            };
        }
        let p = hits as f64 / replications as f64;
        Self {
            pd_hat: p,
            std_error: (p * (1.0 - p) / replications as f64).sqrt(),
            replications,
        }
    }

    pub fn hits(&self) -> u64 {
        (self.pd_hat * self.replications as f64).round() as u64
    }

    /// `|a - b| / sqrt(se_a² + se_b²)`; infinite when both errors vanish and the values differ.
    pub fn z_distance(&self, other: &PdEstimate) -> f64 {
        let se = self.std_error.hypot(other.std_error);
        let d = (self.pd_hat - other.pd_hat).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }
}

/// Which false-alarm functional the calibration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LpfaMode {
    /// `P_∞(T <= m)`: the window starting at the origin.
    #[default]
    Origin,
    /// `max_{ℓ <= ell_max} P_∞(T <= ℓ + m | T > ℓ)`: slow audit mode.
    SupOverEll { ell_max: u64 },
}

/// Threshold search for a target local false-alarm probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub target_alpha: f64,
    pub window_m: u64,
    pub replications: u64,
    pub seed: u64,
    /// Threshold search interval in decision-statistic units.
    #[serde(default = "CalibrationSpec::default_bracket")]
    pub bracket: (f64, f64),
    /// Relative tolerance on the achieved LPFA.
    #[serde(default = "CalibrationSpec::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "CalibrationSpec::default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default)]
    pub mode: LpfaMode,
}

impl CalibrationSpec {
    pub fn new(target_alpha: f64, window_m: u64, replications: u64, seed: u64) -> Self {
        Self {
            target_alpha,
            window_m,
            replications,
            seed,
            bracket: Self::default_bracket(),
            tolerance: Self::default_tolerance(),
            max_iterations: Self::default_max_iterations(),
            mode: LpfaMode::Origin,
        }
    }

    fn default_bracket() -> (f64, f64) {
        (-1e3, 1e3)
    }

    fn default_tolerance() -> f64 {
        0.05
    }

    fn default_max_iterations() -> u32 {
        40
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.target_alpha;
        if !(a > 0.0 && a < 1.0) {
            return domain(format!("target_alpha {a} outside (0,1)"));
        }
        if self.window_m == 0 {
            return domain("window_m must be at least 1");
        }
        if (self.replications as f64) < 10.0 / a {
            return domain(format!(
                "replications {} below 10/alpha = {}",
                self.replications,
                (10.0 / a).ceil()
            ));
        }
        let (lo, hi) = self.bracket;
        if !(lo < hi) {
            return domain(format!("bracket lo={lo} must be below hi={hi}"));
        }
        if !(self.tolerance > 0.0) {
            return domain("tolerance must be positive");
        }
        if self.max_iterations == 0 {
            return domain("max_iterations must be at least 1");
        }
        Ok(())
    }

    /// Simulation horizon needed to evaluate the targeted functional.
    pub fn horizon(&self) -> u64 {
        match self.mode {
            LpfaMode::Origin => self.window_m,
            LpfaMode::SupOverEll { ell_max } => ell_max + self.window_m,
        }
    }
}

/// Full description of a detection-probability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Model assumed by the detectors.
    pub model: LlrModel,
    /// True post-change mean `θ_r`; `None` means no mismatch.
    #[serde(default)]
    pub true_theta: Option<f64>,
    pub duration: DurationLaw,
    /// Discount `ρ` of the modified CUSUM.
    pub rho_tuning: f64,
    /// FMA window `L`.
    pub fma_window: usize,
    #[serde(default)]
    pub fma_start: FmaStart,
    pub calibration: CalibrationSpec,
    pub replications: u64,
    pub seed: u64,
    /// Changepoint `ν`: number of pre-change observations before the change.
    #[serde(default)]
    pub changepoint: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.duration.validate()?;
        self.calibration.validate()?;
        if let Some(t) = self.true_theta {
            self.model.with_theta(t)?;
        }
        if !(0.0..1.0).contains(&self.rho_tuning) {
            return domain(format!("rho_tuning {} outside [0,1)", self.rho_tuning));
        }
        if self.fma_window == 0 {
            return domain("fma_window must be at least 1");
        }
        if self.replications == 0 {
            return domain("replications must be at least 1");
        }
        Ok(())
    }

    /// Model generating the post-change observations.
    pub fn data_model(&self) -> Result<LlrModel> {
        match self.true_theta {
            Some(t) => self.model.with_theta(t),
            None => Ok(self.model.clone()),
        }
    }

    pub fn modified_cusum_rule(&self) -> Rule {
        Rule::ModCusum {
            rho: self.rho_tuning,
        }
    }

    pub fn cusum_rule(&self) -> Rule {
        Rule::Cusum
    }

    pub fn fma_rule(&self) -> Rule {
        Rule::Fma {
            window: self.fma_window,
            form: Default::default(),
            start: self.fma_start,
        }
    }
}

fn check_reps(replications: u64) -> Result<()> {
    if replications == 0 {
        return domain("replications must be at least 1");
    }
    Ok(())
}

/// Feeds the rule's pre-origin warm-up observations, drawn from the pre-change density.
pub(crate) fn warm_up(
    det: &mut AnyDetector,
    rule: &Rule,
    model: &LlrModel,
    map: &IncrementMap,
    rng: &mut RngStream,
) -> Result<()> {
    for _ in 0..rule.warm_up() {
        det.prime(map.apply(model.sample(Regime::Pre, rng)))?;
    }
    Ok(())
}

/// Runs `rule` at `threshold` on pre-change data for at most `horizon` steps.
/// Returns the stopping time, if any.
fn run_pre_change(
    rule: &Rule,
    threshold: f64,
    model: &LlrModel,
    horizon: u64,
    seed: u64,
    replication: u64,
) -> Result<Option<u64>> {
    let map = rule.increment_map(model);
    let mut det = rule.build(threshold)?;
    let mut rng = RngStream::new(seed, replication);
    warm_up(&mut det, rule, model, &map, &mut rng)?;
    for _ in 0..horizon {
        let y = model.sample(Regime::Pre, &mut rng);
        let r = det.observe(map.apply(y))?;
        if r.stopped() {
            return Ok(r.stop_time);
        }
    }
    Ok(None)
}

/// `P_∞(T <= m)` with the detector run at the given threshold.
pub fn estimate_lpfa(
    rule: &Rule,
    threshold: f64,
    spec: &CalibrationSpec,
    model: &LlrModel,
) -> Result<PdEstimate> {
    check_reps(spec.replications)?;
    if spec.window_m == 0 {
        return domain("window_m must be at least 1");
    }
    rule.build(threshold)?;
    let hits = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            run_pre_change(rule, threshold, model, spec.window_m, spec.seed, r)
                .map(|t| u64::from(t.is_some()))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(PdEstimate::from_counts(hits, spec.replications))
}

/// `P_∞(T <= ℓ + m | T > ℓ)`, estimated over the replications surviving to `ℓ`.
pub fn estimate_conditional_lpfa(
    rule: &Rule,
    threshold: f64,
    model: &LlrModel,
    m: u64,
    ell: u64,
    replications: u64,
    seed: u64,
) -> Result<PdEstimate> {
    check_reps(replications)?;
    rule.build(threshold)?;
    let (survivors, alarms) = (0..replications)
        .into_par_iter()
        .map(|r| {
            run_pre_change(rule, threshold, model, ell + m, seed, r).map(|t| match t {
                Some(t) if t <= ell => (0u64, 0u64),
                Some(_) => (1, 1),
                None => (1, 0),
            })
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(PdEstimate::from_counts(alarms, survivors))
}

/// Worst-case (over `ν = changepoint`) detection probability `P(T <= ν + N | T > ν)`.
///
/// Per replication the duration `N` is drawn first, then any warm-up, then
/// `ν` pre-change and up to `N` post-change observations; runs end at
/// `min(T, ν + N)`.
/// Replications that alarm before the change are excluded.
pub fn estimate_pd(rule: &Rule, threshold: f64, spec: &ExperimentSpec) -> Result<PdEstimate> {
    check_reps(spec.replications)?;
    spec.duration.validate()?;
    if spec.duration == DurationLaw::Infinite {
        return domain("detection probability needs a finite change duration");
    }
    let data = spec.data_model()?;
    let map = rule.increment_map(&spec.model);
    let pre_model = &spec.model;
    rule.build(threshold)?;
    let nu = spec.changepoint;
    let (eligible, hits) = (0..spec.replications)
        .into_par_iter()
        .map_init(
            || rule.build(threshold).expect("rule validated"),
            |det, r| -> Result<(u64, u64)> {
                det.reset();
                let mut rng = RngStream::new(spec.seed, r);
                let n = spec.duration.sample(&mut rng).expect("finite duration");
                warm_up(det, rule, pre_model, &map, &mut rng)?;
                for _ in 0..nu {
                    let y = pre_model.sample(Regime::Pre, &mut rng);
                    if det.observe(map.apply(y))?.stopped() {
                        return Ok((0, 0));
                    }
                }
                for _ in 0..n {
                    let y = data.sample(Regime::Post, &mut rng);
                    if det.observe(map.apply(y))?.stopped() {
                        return Ok((1, 1));
                    }
                }
                Ok((1, 0))
            },
        )
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(PdEstimate::from_counts(hits, eligible))
}

/// Mean run length to false alarm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    /// Mean of `min(T, cap)`.
    pub mean: f64,
    pub std_error: f64,
    pub replications: u64,
    /// Replications that reached `cap` without stopping.
    pub capped: u64,
    /// Set when 1% or more of the runs were capped: `mean` is then only a lower bound.
    pub lower_bound_only: bool,
}

pub fn estimate_arl(
    rule: &Rule,
    threshold: f64,
    model: &LlrModel,
    replications: u64,
    cap: u64,
    seed: u64,
) -> Result<ArlEstimate> {
    check_reps(replications)?;
    if cap == 0 {
        return domain("cap must be at least 1");
    }
    rule.build(threshold)?;
    let (sum, sum_sq, capped) = (0..replications)
        .into_par_iter()
        .map(|r| {
            run_pre_change(rule, threshold, model, cap, seed, r).map(|t| {
                let len = u128::from(t.unwrap_or(cap));
                (len, len * len, u64::from(t.is_none()))
            })
        })
        .try_reduce(|| (0, 0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2 + b.2)))?;
    let n = replications as f64;
    let mean = sum as f64 / n;
    let var = if replications > 1 {
        ((sum_sq as f64) - n * mean * mean).max(0.0) / (n - 1.0)
    } else {
        0.0
    };
    Ok(ArlEstimate {
        mean,
        std_error: (var / n).sqrt(),
        replications,
        capped,
        lower_bound_only: capped as f64 >= 0.01 * n,
    })
}

/// ARL lower bound `3/2 + (m/α)(1 - 3α/2)` implied by a local false-alarm constraint.
pub fn gamma_bound(m: u64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha {alpha} outside (0,1)"));
    }
    if m == 0 {
        return domain("m must be at least 1");
    }
    Ok(1.5 + (m as f64 / alpha) * (1.0 - 1.5 * alpha))
}

/// Outcome of calibrating one rule and estimating its detection probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: Rule,
    pub calibration: Calibration,
    pub pd: PdEstimate,
}

/// Calibrate `rule` under the assumed model and estimate its PD.
pub fn run_experiment(rule: &Rule, spec: &ExperimentSpec) -> Result<RuleOutcome> {
    spec.validate()?;
    let calibration = calibrate_threshold(rule, &spec.calibration, &spec.model)?;
    let pd = estimate_pd(rule, calibration.threshold, spec)?;
    Ok(RuleOutcome {
        rule: rule.clone(),
        calibration,
        pd,
    })
}

/// Grid of assumed vs. true post-change means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchGrid {
    pub assumed_thetas: Vec<f64>,
    pub true_thetas: Vec<f64>,
    pub sigma: f64,
    pub rho: f64,
    pub fma_window: usize,
    #[serde(default)]
    pub fma_start: FmaStart,
    #[serde(default)]
    pub duration: Option<DurationLaw>,
    pub window_m: u64,
    pub alpha: f64,
    pub calibration_replications: u64,
    pub pd_replications: u64,
    pub calibration_seed: u64,
    pub pd_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchCell {
    pub rule: String,
    pub assumed_theta: f64,
    pub true_theta: f64,
    pub threshold: f64,
    pub pd: PdEstimate,
}

/// One PD estimate per (assumed θ, true θ_r, rule); rules are calibrated once per assumed θ.
pub fn run_mismatch_study(grid: &MismatchGrid, cache: &CalibrationCache) -> Result<Vec<MismatchCell>> {
    if grid.assumed_thetas.is_empty() || grid.true_thetas.is_empty() {
        return domain("mismatch grid is empty");
    }
    let mut cells = Vec::new();
    for &theta in &grid.assumed_thetas {
        let spec = ExperimentSpec {
            model: LlrModel::gaussian(theta, grid.sigma)?,
            true_theta: None,
            duration: grid.duration.unwrap_or(DurationLaw::Geometric { rho: grid.rho }),
            rho_tuning: grid.rho,
            fma_window: grid.fma_window,
            fma_start: grid.fma_start,
            calibration: CalibrationSpec::new(
                grid.alpha,
                grid.window_m,
                grid.calibration_replications,
                grid.calibration_seed,
            ),
            replications: grid.pd_replications,
            seed: grid.pd_seed,
            changepoint: 0,
        };
        spec.validate()?;
        for rule in [spec.modified_cusum_rule(), spec.fma_rule()] {
            let cal = cache.get_or_calibrate(&rule, &spec.calibration, &spec.model)?;
            for &theta_r in &grid.true_thetas {
                let cell_spec = ExperimentSpec {
                    true_theta: Some(theta_r),
                    ..spec.clone()
                };
                let pd = estimate_pd(&rule, cal.threshold, &cell_spec)?;
                cells.push(MismatchCell {
                    rule: rule.name().to_string(),
                    assumed_theta: theta,
                    true_theta: theta_r,
                    threshold: cal.threshold,
                    pd,
                });
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::FmaForm;

    fn gauss(theta: f64) -> LlrModel {
        LlrModel::gaussian(theta, 1.0).unwrap()
    }

    #[test]
    fn gamma_bound_values() {
        assert_eq!(gamma_bound(20, 0.001).unwrap(), 19971.5);
        assert!((gamma_bound(1, 2.0 / 3.0).unwrap() - 1.5).abs() < 1e-12);
        assert!((gamma_bound(10, 0.05).unwrap() - 186.5).abs() < 1e-9);
        assert!((gamma_bound(5, 0.2).unwrap() - 19.0).abs() < 1e-9);
        assert!(gamma_bound(5, 0.0).is_err());
        assert!(gamma_bound(5, 1.0).is_err());
    }

    #[test]
    fn pd_estimate_standard_error() {
        let e = PdEstimate::from_counts(250, 1000);
        assert!((e.std_error - (0.25f64 * 0.75 / 1000.0).sqrt()).abs() < 1e-12);
        assert_eq!(e.hits(), 250);
    }

    #[test]
    fn unreachable_threshold_never_alarms() {
        let spec = CalibrationSpec::new(0.01, 20, 2000, 1);
        let rule = Rule::ModCusum { rho: 0.1 };
        let e = estimate_lpfa(&rule, 1e308f64.ln(), &spec, &gauss(2.0)).unwrap();
        assert_eq!(e.pd_hat, 0.0);
    }

    #[test]
    fn zero_replications_rejected() {
        let spec = CalibrationSpec::new(0.01, 20, 0, 1);
        assert!(estimate_lpfa(&Rule::Cusum, 1.0, &spec, &gauss(1.0)).is_err());
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = CalibrationSpec::new(1.5, 20, 1000, 1);
        assert!(spec.validate().is_err());
        spec.target_alpha = 0.01;
        assert!(spec.validate().is_ok());
        spec.replications = 999;
        assert!(spec.validate().is_err());
        spec.replications = 1000;
        spec.bracket = (1.0, 1.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pd_rejects_infinite_duration() {
        let spec = ExperimentSpec {
            model: gauss(2.0),
            true_theta: None,
            duration: DurationLaw::Infinite,
            rho_tuning: 0.1,
            fma_window: 10,
            fma_start: FmaStart::Cold,
            calibration: CalibrationSpec::new(0.01, 20, 1000, 1),
            replications: 100,
            seed: 1,
            changepoint: 0,
        };
        assert!(estimate_pd(&Rule::Cusum, 1.0, &spec).is_err());
    }

    #[test]
    fn pd_zero_at_unreachable_threshold() {
        let spec = ExperimentSpec {
            model: gauss(2.0),
            true_theta: None,
            duration: DurationLaw::Geometric { rho: 0.1 },
            rho_tuning: 0.1,
            fma_window: 10,
            fma_start: FmaStart::Cold,
            calibration: CalibrationSpec::new(0.01, 20, 1000, 1),
            replications: 2000,
            seed: 1,
            changepoint: 0,
        };
        let pd = estimate_pd(&spec.modified_cusum_rule(), 1e308f64.ln(), &spec).unwrap();
        assert_eq!(pd.pd_hat, 0.0);
        let fma = Rule::fma(10, FmaForm::Statistic);
        assert_eq!(estimate_pd(&fma, 1e308, &spec).unwrap().pd_hat, 0.0);
    }

    #[test]
    fn arl_is_one_for_tiny_threshold() {
        let a = estimate_arl(&Rule::ModCusum { rho: 0.1 }, -1e3, &gauss(1.0), 500, 100, 3).unwrap();
        assert_eq!(a.mean, 1.0);
        assert_eq!(a.capped, 0);
        assert!(!a.lower_bound_only);
    }

    #[test]
    fn arl_flags_capped_runs() {
        let a = estimate_arl(&Rule::Cusum, 1e3, &gauss(1.0), 100, 50, 3).unwrap();
        assert_eq!(a.mean, 50.0);
        assert_eq!(a.capped, 100);
        assert!(a.lower_bound_only);
    }
}
