use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{warm_up, CalibrationSpec, LpfaMode, PdEstimate};
use crate::detectors::{Detector, Rule};
use crate::error::{Error, Result};
use crate::model::{LlrModel, Regime};
use crate::rng::RngStream;

/// Result of a threshold calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Threshold in decision-statistic units (`log B` for the CUSUM variants).
    pub threshold: f64,
    /// LPFA at `threshold` on the calibration replications.
    pub lpfa: PdEstimate,
    pub iterations: u32,
    /// Whether `|lpfa - α| <= tolerance·α`.
    pub within_tolerance: bool,
}

/// Largest decision statistic reached within the first `horizon` steps, one value per replication.
///
/// A rule with threshold `h` alarms by `horizon` exactly when this maximum is at least `h`.
pub fn max_statistics(
    rule: &Rule,
    model: &LlrModel,
    horizon: u64,
    replications: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let map = rule.increment_map(model);
    rule.build(f64::INFINITY)?;
    (0..replications)
        .into_par_iter()
        .map_init(
            || rule.build(f64::INFINITY).expect("rule validated"),
            |det, r| {
                det.reset();
                let mut rng = RngStream::new(seed, r);
                warm_up(det, rule, model, &map, &mut rng)?;
                let mut best = f64::NEG_INFINITY;
                for _ in 0..horizon {
                    det.observe(map.apply(model.sample(Regime::Pre, &mut rng)))?;
                    if let Some(s) = det.decision_statistic() {
                        best = best.max(s);
                    }
                }
                Ok(best)
            },
        )
        .collect()
}

/// Running-maximum records `(time, value)` of every replication, flattened.
///
/// The alarm time for threshold `h` is the time of the first record `>= h`.
struct Records {
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    horizon: u64,
}

impl Records {
    fn simulate(
        rule: &Rule,
        model: &LlrModel,
        horizon: u64,
        replications: u64,
        seed: u64,
    ) -> Result<Self> {
        let map = rule.increment_map(model);
        rule.build(f64::INFINITY)?;
        let per_rep: Vec<Vec<(u32, f64)>> = (0..replications)
            .into_par_iter()
            .map_init(
                || rule.build(f64::INFINITY).expect("rule validated"),
                |det, r| {
                    det.reset();
                    let mut rng = RngStream::new(seed, r);
                    warm_up(det, rule, model, &map, &mut rng)?;
                    let mut best = f64::NEG_INFINITY;
                    let mut out = Vec::new();
                    for n in 1..=horizon {
                        det.observe(map.apply(model.sample(Regime::Pre, &mut rng)))?;
                        if let Some(s) = det.decision_statistic() {
                            if s > best {
                                best = s;
                                out.push((n as u32, s));
                            }
                        }
                    }
                    Ok(out)
                },
            )
            .collect::<Result<_>>()?;
        let mut offsets = Vec::with_capacity(per_rep.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for recs in per_rep {
            entries.extend(recs);
            offsets.push(entries.len());
        }
        Ok(Self {
            offsets,
            entries,
            horizon,
        })
    }

    fn replications(&self) -> u64 {
        (self.offsets.len() - 1) as u64
    }

    /// `max_{ℓ <= ell_max} P(T <= ℓ+m | T > ℓ)` at threshold `h`, plus the worst `ℓ`.
    fn sup_lpfa(&self, h: f64, m: u64, ell_max: u64) -> (PdEstimate, u64) {
        let horizon = self.horizon as usize;
        // stops[t] = number of replications stopping at time t
        let mut stops = vec![0u64; horizon + 1];
        for w in self.offsets.windows(2) {
            if let Some(&(t, _)) = self.entries[w[0]..w[1]].iter().find(|(_, v)| *v >= h) {
                stops[t as usize] += 1;
            }
        }
        let n = self.replications();
        // survival[ℓ] = #{T > ℓ}
        let mut survival = vec![n; horizon + 1];
        for t in 1..=horizon {
            survival[t] = survival[t - 1] - stops[t];
        }
        let mut worst = (PdEstimate::from_counts(0, n), 0);
        for ell in 0..=ell_max.min(self.horizon.saturating_sub(m)) as usize {
            let at_risk = survival[ell];
            if at_risk == 0 {
                break;
            }
            let alarms = at_risk - survival[ell + m as usize];
            let est = PdEstimate::from_counts(alarms, at_risk);
            if est.pd_hat > worst.0.pd_hat {
                worst = (est, ell as u64);
            }
        }
        worst
    }
}

enum Sampled {
    Maxima(Vec<f64>),
    Records(Records, u64, u64),
}

impl Sampled {
    fn lpfa(&self, h: f64) -> PdEstimate {
        match self {
            Sampled::Maxima(v) => {
                let hits = v.iter().filter(|&&s| s >= h).count() as u64;
                PdEstimate::from_counts(hits, v.len() as u64)
            }
            Sampled::Records(r, m, ell_max) => r.sup_lpfa(h, *m, *ell_max).0,
        }
    }
}

/// Find the threshold whose LPFA matches `spec.target_alpha`.
///
/// Draws the pre-change replications once, then bisects the threshold over
/// that fixed sample (common random numbers), so every bracket evaluation is
/// a count over the same paths. Returns the upper end of the final bracket,
/// i.e. a threshold whose estimated LPFA does not exceed `α`.
pub fn calibrate_threshold(
    rule: &Rule,
    spec: &CalibrationSpec,
    model: &LlrModel,
) -> Result<Calibration> {
    spec.validate()?;
    model.validate()?;
    rule.validate()?;
    let sampled = match spec.mode {
        LpfaMode::Origin => Sampled::Maxima(max_statistics(
            rule,
            model,
            spec.window_m,
            spec.replications,
            spec.seed,
        )?),
        LpfaMode::SupOverEll { ell_max } => Sampled::Records(
            Records::simulate(rule, model, spec.horizon(), spec.replications, spec.seed)?,
            spec.window_m,
            ell_max,
        ),
    };
    let alpha = spec.target_alpha;
    let (mut lo, mut hi) = spec.bracket;
    let p_lo = sampled.lpfa(lo);
    let p_hi = sampled.lpfa(hi);
    if p_lo.pd_hat < alpha || p_hi.pd_hat > alpha {
        return Err(Error::Bracket {
            lo,
            hi,
            alpha,
            lpfa_lo: p_lo.pd_hat,
            lpfa_hi: p_hi.pd_hat,
        });
    }
    let mut iterations = 0;
    let mut at_hi = p_hi;
    while iterations < spec.max_iterations {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = sampled.lpfa(mid);
        if p.pd_hat > alpha {
            lo = mid;
        } else {
            hi = mid;
            at_hi = p;
        }
    }
    Ok(Calibration {
        threshold: hi,
        lpfa: at_hi,
        iterations,
        within_tolerance: (at_hi.pd_hat - alpha).abs() <= spec.tolerance * alpha,
    })
}

/// Memoizes calibrations within a run.
///
/// Keyed by rule, the observation → increment map and the calibration spec,
/// so e.g. the θ-free statistic-form FMA is calibrated once for all assumed θ.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    inner: Mutex<HashMap<String, Calibration>>,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(rule: &Rule, spec: &CalibrationSpec, model: &LlrModel) -> String {
        let model_key = match model {
            LlrModel::Gaussian { sigma, .. } => format!("{:?}|pre-sigma={sigma}", rule.increment_map(model)),
            LlrModel::Discrete(d) => format!("{d:?}"),
        };
        format!("{rule:?}|{model_key}|{spec:?}")
    }

    pub fn get_or_calibrate(
        &self,
        rule: &Rule,
        spec: &CalibrationSpec,
        model: &LlrModel,
    ) -> Result<Calibration> {
        let key = Self::key(rule, spec, model);
        if let Some(c) = self.inner.lock().expect("cache poisoned").get(&key) {
            return Ok(c.clone());
        }
        let c = calibrate_threshold(rule, spec, model)?;
        self.inner
            .lock()
            .expect("cache poisoned")
            .insert(key, c.clone());
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::FmaForm;

    #[test]
    fn bracket_error_reports_endpoints() {
        let model = LlrModel::gaussian(1.0, 1.0).unwrap();
        let mut spec = CalibrationSpec::new(0.1, 5, 1000, 1);
        spec.bracket = (50.0, 60.0);
        match calibrate_threshold(&Rule::Cusum, &spec, &model) {
            Err(Error::Bracket { lpfa_lo, .. }) => assert_eq!(lpfa_lo, 0.0),
            other => panic!("expected bracket error, got {other:?}"),
        }
    }

    #[test]
    fn median_for_single_test() {
        let model = LlrModel::gaussian(2.0, 1.0).unwrap();
        let spec = CalibrationSpec::new(0.5, 1, 200_000, 9);
        let rule = Rule::fma(1, FmaForm::Statistic);
        let c = calibrate_threshold(&rule, &spec, &model).unwrap();
        assert!(c.threshold.abs() < 0.02, "threshold {}", c.threshold);
        assert!(c.within_tolerance);
    }

    #[test]
    fn sup_mode_is_at_least_origin_mode() {
        let model = LlrModel::gaussian(1.0, 1.0).unwrap();
        let rule = Rule::fma(5, FmaForm::Statistic);
        let origin = CalibrationSpec::new(0.2, 5, 20_000, 3);
        let sup = CalibrationSpec {
            mode: LpfaMode::SupOverEll { ell_max: 20 },
            ..origin.clone()
        };
        let a = calibrate_threshold(&rule, &origin, &model).unwrap();
        let b = calibrate_threshold(&rule, &sup, &model).unwrap();
        assert!(b.threshold >= a.threshold);
    }

    #[test]
    fn cache_shares_theta_free_fma() {
        let cache = CalibrationCache::new();
        let spec = CalibrationSpec::new(0.05, 10, 2000, 1);
        let rule = Rule::fma(5, FmaForm::Statistic);
        let a = cache
            .get_or_calibrate(&rule, &spec, &LlrModel::gaussian(2.0, 1.0).unwrap())
            .unwrap();
        let b = cache
            .get_or_calibrate(&rule, &spec, &LlrModel::gaussian(1.2, 1.0).unwrap())
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
        cache
            .get_or_calibrate(&Rule::ModCusum { rho: 0.1 }, &spec, &LlrModel::gaussian(1.2, 1.0).unwrap())
            .unwrap();
        assert_eq!(cache.len(), 2);
    }
}
