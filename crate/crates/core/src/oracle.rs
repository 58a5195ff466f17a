//! Exact stopping-time laws for small discrete models by exhaustive enumeration.
//!
//! Every observation sequence up to a horizon is walked depth-first with its
//! probability; branches are pruned as soon as the detector stops. The cost
//! is bounded by `K^(warm-up + horizon)` detector steps, which must fit in
//! [`ENUMERATION_BUDGET`].

use serde::{Deserialize, Serialize};

use crate::detectors::{AnyDetector, Detector, IncrementMap, Rule};
use crate::error::{domain, Error, Result};
use crate::model::{DurationLaw, LlrModel, Regime};

pub use crate::model::DiscreteModel;

/// Maximum number of enumerated sequences.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

/// `P(T = t)` for `t = 1..=horizon`, plus the mass that survives the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLaw {
    /// `pmf[t-1] = P(T = t)`.
    pub pmf: Vec<f64>,
    /// `P(T > horizon)`.
    pub survival: f64,
}

impl StopLaw {
    pub fn horizon(&self) -> u64 {
        self.pmf.len() as u64
    }

    /// `P(T <= t)`.
    pub fn cdf(&self, t: u64) -> f64 {
        self.pmf.iter().take(t as usize).sum()
    }

    /// `pmf` plus `survival`; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.pmf.iter().sum::<f64>() + self.survival
    }
}

/// Exact detection probability under a random duration, bracketed because
/// durations beyond the horizon are not enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdBracket {
    pub lower: f64,
    pub upper: f64,
}

impl PdBracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn sequences_needed(k: usize, depth: u64) -> Option<u128> {
    (k as u128).checked_pow(u32::try_from(depth).ok()?)
}

struct Walk<'a> {
    map: &'a IncrementMap,
    pre: &'a [f64],
    post: &'a [f64],
    regime: &'a dyn Fn(u64) -> Regime,
    horizon: u64,
    pmf: Vec<f64>,
    survived: f64,
}

impl Walk<'_> {
    fn prime(&mut self, det: &AnyDetector, left: usize, mass: f64) -> Result<()> {
        if left == 0 {
            return self.step(det, 1, mass);
        }
        for (k, &p) in self.pre.iter().enumerate() {
            let mut child = det.clone();
            child.prime(self.map.apply(k as f64))?;
            self.prime(&child, left - 1, mass * p)?;
        }
        Ok(())
    }

    fn step(&mut self, det: &AnyDetector, n: u64, mass: f64) -> Result<()> {
        if n > self.horizon {
            self.survived += mass;
            return Ok(());
        }
        let pmf = match (self.regime)(n) {
            Regime::Pre => self.pre,
            Regime::Post => self.post,
        };
        for (k, &p) in pmf.iter().enumerate() {
            let mut child = det.clone();
            let r = child.observe(self.map.apply(k as f64))?;
            if r.stopped() {
                self.pmf[(n - 1) as usize] += mass * p;
            } else {
                self.step(&child, n + 1, mass * p)?;
            }
        }
        Ok(())
    }
}

/// Exact law of `T ∧ (horizon + 1)` when observation `n` is drawn from `regime(n)`.
pub fn stop_law(
    rule: &Rule,
    threshold: f64,
    model: &DiscreteModel,
    regime: &dyn Fn(u64) -> Regime,
    horizon: u64,
) -> Result<StopLaw> {
    if horizon == 0 {
        return domain("horizon must be at least 1");
    }
    let depth = horizon + rule.warm_up() as u64;
    let k = model.alphabet_size();
    match sequences_needed(k, depth) {
        Some(n) if n <= ENUMERATION_BUDGET => {}
        other => {
            return Err(Error::Size {
                required: other.unwrap_or(u128::MAX),
                budget: ENUMERATION_BUDGET,
            })
        }
    }
    let llr_model = LlrModel::Discrete(model.clone());
    let map = rule.increment_map(&llr_model);
    let det = rule.build(threshold)?;
    let mut walk = Walk {
        map: &map,
        pre: model.pmf(Regime::Pre),
        post: model.pmf(Regime::Post),
        regime,
        horizon,
        pmf: vec![0.0; horizon as usize],
        survived: 0.0,
    };
    walk.prime(&det, rule.warm_up(), 1.0)?;
    Ok(StopLaw {
        pmf: walk.pmf,
        survival: walk.survived,
    })
}

/// Checks that enumerated stop probabilities plus survival conserve unit mass.
pub fn check_mass(law: &StopLaw, tol: f64) -> Result<()> {
    let total = law.total_mass();
    if law.pmf.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > tol {
        return Err(Error::Rejected(format!(
            "enumerated mass {total} differs from 1"
        )));
    }
    Ok(())
}

/// `P_∞(T <= ℓ + m | T > ℓ)`.
pub fn exact_lpfa(
    rule: &Rule,
    threshold: f64,
    model: &DiscreteModel,
    m: u64,
    ell: u64,
) -> Result<f64> {
    if m == 0 {
        return domain("m must be at least 1");
    }
    let law = stop_law(rule, threshold, model, &|_| Regime::Pre, ell + m)?;
    let survive_ell = 1.0 - law.cdf(ell);
    if survive_ell <= 0.0 {
        return domain(format!("the rule stops surely by ℓ={ell}"));
    }
    Ok((law.cdf(ell + m) - law.cdf(ell)) / survive_ell)
}

/// `P̄_0(T <= N)`: the change starts at the origin and lasts `N` steps.
///
/// Durations longer than `n_max` are not enumerated; their mass is the gap
/// between the bracket ends. Fixed durations up to `n_max` are exact.
pub fn exact_pd(
    rule: &Rule,
    threshold: f64,
    model: &DiscreteModel,
    duration: DurationLaw,
    n_max: u64,
) -> Result<PdBracket> {
    duration.validate()?;
    let (weights, tail): (Vec<f64>, f64) = match duration {
        DurationLaw::Geometric { rho } => (
            (1..=n_max)
                .map(|i| rho * (1.0 - rho).powf((i - 1) as f64))
                .collect(),
            (1.0 - rho).powf(n_max as f64),
        ),
        DurationLaw::GeometricFailures { rho } => (
            (1..=n_max)
                .map(|i| rho * (1.0 - rho).powf(i as f64))
                .collect(),
            (1.0 - rho).powf((n_max + 1) as f64),
        ),
        DurationLaw::Fixed { n } => {
            if n > n_max {
                return domain(format!("fixed duration {n} exceeds n_max={n_max}"));
            }
            let mut w = vec![0.0; n_max as usize];
            w[(n - 1) as usize] = 1.0;
            (w, 0.0)
        }
        DurationLaw::Infinite => {
            return domain("detection probability needs a finite change duration")
        }
    };
    let law = stop_law(rule, threshold, model, &|_| Regime::Post, n_max)?;
    let mut cdf = 0.0;
    let mut lower = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cdf += law.pmf[i];
        lower += w * cdf;
    }
    Ok(PdBracket {
        lower,
        upper: (lower + tail).min(1.0),
    })
}

/// `E_∞[min(T, cap)]`, the run length to false alarm truncated at `cap`.
pub fn exact_truncated_arl(
    rule: &Rule,
    threshold: f64,
    model: &DiscreteModel,
    cap: u64,
) -> Result<f64> {
    let law = stop_law(rule, threshold, model, &|_| Regime::Pre, cap)?;
    let partial: f64 = law
        .pmf
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum();
    Ok(partial + cap as f64 * law.survival)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{FmaForm, FmaStart};
    use approx::assert_relative_eq;

    fn coin() -> DiscreteModel {
        DiscreteModel::new(vec![0.5, 0.5], vec![0.8, 0.2]).unwrap()
    }

    #[test]
    fn single_step_fma_is_symbol_probability() {
        // symbol 0 has LLR ln 1.6 > 0, symbol 1 has ln 0.4 < 0
        let rule = Rule::fma(1, FmaForm::Llr);
        let p = exact_lpfa(&rule, 0.0, &coin(), 1, 0).unwrap();
        assert_relative_eq!(p, 0.5, epsilon = 1e-15);
        let pd = exact_pd(&rule, 0.0, &coin(), DurationLaw::Fixed { n: 1 }, 1).unwrap();
        assert_relative_eq!(pd.lower, 0.8, epsilon = 1e-15);
        assert_eq!(pd.width(), 0.0);
    }

    #[test]
    fn two_step_cusum_by_hand() {
        // stopping at 1.5·ln 1.6 needs two 0-symbols in a row
        let a = 1.6f64.ln();
        let rule = Rule::Cusum;
        let law = stop_law(&rule, 1.5 * a, &coin(), &|_| Regime::Pre, 2).unwrap();
        assert_eq!(law.pmf[0], 0.0);
        assert_relative_eq!(law.pmf[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(law.total_mass(), 1.0, epsilon = 1e-15);
        check_mass(&law, 1e-12).unwrap();
    }

    #[test]
    fn budget_is_enforced() {
        let m = DiscreteModel::new(vec![0.25; 4], vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        match stop_law(&Rule::Cusum, 50.0, &m, &|_| Regime::Pre, 20) {
            Err(Error::Size { required, budget }) => {
                assert_eq!(required, 4u128.pow(20));
                assert_eq!(budget, ENUMERATION_BUDGET);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn geometric_tail_bounds_bracket() {
        let b = exact_pd(
            &Rule::ModCusum { rho: 0.2 },
            1.0,
            &coin(),
            DurationLaw::Geometric { rho: 0.2 },
            10,
        )
        .unwrap();
        assert_relative_eq!(b.width(), 0.8f64.powi(10), epsilon = 1e-12);
        assert!(exact_pd(&Rule::Cusum, 1.0, &coin(), DurationLaw::Infinite, 5).is_err());
    }

    #[test]
    fn truncated_arl_of_never_stopping_rule_is_cap() {
        let arl = exact_truncated_arl(&Rule::Cusum, 1e3, &coin(), 8).unwrap();
        assert_eq!(arl, 8.0);
        let arl = exact_truncated_arl(&Rule::Cusum, -1e3, &coin(), 8).unwrap();
        assert_eq!(arl, 1.0);
    }

    #[test]
    fn warm_fma_enumerates_the_warm_up() {
        let warm = Rule::Fma {
            window: 2,
            form: FmaForm::Llr,
            start: FmaStart::Warm,
        };
        // two 0-symbols (one primed) are needed to pass 1.9 ln 1.6
        let law = stop_law(&warm, 1.9 * 1.6f64.ln(), &coin(), &|_| Regime::Pre, 1).unwrap();
        assert_relative_eq!(law.pmf[0], 0.25, epsilon = 1e-15);
    }
}
