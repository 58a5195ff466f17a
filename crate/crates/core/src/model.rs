//! Observation models, log-likelihood ratios and duration laws.
//!
//! Observations are independent: `g` before the change, `f` during it. The
//! Gaussian shift model `N(0, σ²) → N(θ, σ²)` is the workhorse; a discrete
//! model over a small alphabet exists so that stopping-time functionals can
//! be computed exactly by enumeration (see [`crate::oracle`]).

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::rng::RngStream;

/// Which density an observation is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Pre,
    Post,
}

/// Pre/post-change pmfs over an alphabet of at most four symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pre: Vec<f64>,
    post: Vec<f64>,
}

pub const MAX_ALPHABET: usize = 4;

impl DiscreteModel {
    /// Both pmfs must have the same length (2..=4), strictly positive entries and unit mass.
    pub fn new(pre: Vec<f64>, post: Vec<f64>) -> Result<Self> {
        if pre.len() != post.len() {
            return domain("pre/post pmfs differ in length");
        }
        if !(2..=MAX_ALPHABET).contains(&pre.len()) {
            return domain(format!(
                "alphabet size {} outside 2..={MAX_ALPHABET}",
                pre.len()
            ));
        }
        for (name, pmf) in [("pre", &pre), ("post", &post)] {
            if pmf.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return domain(format!("{name}-change pmf must be strictly positive"));
            }
            let total: f64 = pmf.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return domain(format!("{name}-change pmf sums to {total}, not 1"));
            }
        }
        Ok(Self { pre, post })
    }

    pub fn alphabet_size(&self) -> usize {
        self.pre.len()
    }

    pub fn pmf(&self, regime: Regime) -> &[f64] {
        match regime {
            Regime::Pre => &self.pre,
            Regime::Post => &self.post,
        }
    }

    pub fn llr_of_symbol(&self, symbol: usize) -> f64 {
        self.post[symbol].ln() - self.pre[symbol].ln()
    }

    fn sample(&self, regime: Regime, rng: &mut RngStream) -> usize {
        let pmf = self.pmf(regime);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        pmf.len() - 1
    }
}

/// A pre/post-change observation model with its log-likelihood ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlrModel {
    /// `g = N(0, σ²)`, `f = N(θ, σ²)`.
    Gaussian { theta: f64, sigma: f64 },
    /// Symbols are passed around as `f64` holding the symbol index.
    Discrete(DiscreteModel),
}

impl LlrModel {
    pub fn gaussian(theta: f64, sigma: f64) -> Result<Self> {
        if !theta.is_finite() {
            return domain("theta must be finite");
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return domain("sigma must be positive");
        }
        Ok(Self::Gaussian { theta, sigma })
    }

    pub fn discrete(pre: Vec<f64>, post: Vec<f64>) -> Result<Self> {
        DiscreteModel::new(pre, post).map(Self::Discrete)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian { theta, sigma } => Self::gaussian(*theta, *sigma).map(|_| ()),
            Self::Discrete(d) => DiscreteModel::new(d.pre.clone(), d.post.clone()).map(|_| ()),
        }
    }

    /// `log f(y) - log g(y)`.
    pub fn llr(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return domain(format!("observation {y} is not finite"));
        }
        match self {
            Self::Gaussian { theta, sigma } => {
                let s2 = sigma * sigma;
                Ok(theta * y / s2 - theta * theta / (2.0 * s2))
            }
            Self::Discrete(d) => Ok(d.llr_of_symbol(symbol_index(y, d.alphabet_size())?)),
        }
    }

    /// A statistic of which the LLR is an increasing function.
    ///
    /// For the Gaussian model this is the standardized observation `y/σ`
    /// (sign-flipped when `θ < 0`), which does not involve `|θ|`; for the
    /// discrete model it is the LLR itself.
    pub fn monotone_statistic(&self, y: f64) -> Result<f64> {
        match self {
            Self::Gaussian { theta, sigma } => {
                if !y.is_finite() {
                    return domain(format!("observation {y} is not finite"));
                }
                let s = y / sigma;
                Ok(if *theta < 0.0 { -s } else { s })
            }
            Self::Discrete(_) => self.llr(y),
        }
    }

    pub fn sample(&self, regime: Regime, rng: &mut RngStream) -> f64 {
        match self {
            Self::Gaussian { theta, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                match regime {
                    Regime::Pre => sigma * z,
                    Regime::Post => theta + sigma * z,
                }
            }
            Self::Discrete(d) => d.sample(regime, rng) as f64,
        }
    }

    /// Same family with a different post-change mean; discrete models are returned unchanged.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        match self {
            Self::Gaussian { sigma, .. } => Self::gaussian(theta, *sigma),
            Self::Discrete(_) => Ok(self.clone()),
        }
    }
}

fn symbol_index(y: f64, k: usize) -> Result<usize> {
    if y < 0.0 || y.fract() != 0.0 || y >= k as f64 {
        return domain(format!("{y} is not a symbol of a {k}-letter alphabet"));
    }
    Ok(y as usize)
}

/// Geometric law on `{1, 2, ...}` with success probability `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomPrior {
    rho: f64,
}

impl GeomPrior {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return domain(format!("geometric parameter {rho} outside (0,1)"));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `ρ(1-ρ)^(i-1)`
    pub fn pmf(&self, i: u64) -> Result<f64> {
        if i == 0 {
            return domain("geometric support starts at 1");
        }
        Ok(self.rho * (1.0 - self.rho).powf((i - 1) as f64))
    }

    /// `P(N > n) = (1-ρ)^n`
    pub fn survival(&self, n: u64) -> f64 {
        (1.0 - self.rho).powf(n as f64)
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rho
    }

    pub fn sample(&self, rng: &mut RngStream) -> u64 {
        // rand_distr counts failures before the first success.
        let failures = Geometric::new(self.rho)
            .expect("rho validated in (0,1)")
            .sample(rng);
        failures.saturating_add(1)
    }
}

/// Law of the change duration `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum DurationLaw {
    /// `P(N = i) = ρ(1-ρ)^(i-1)`, `i >= 1`.
    Geometric { rho: f64 },
    /// Number of failures before the first success: `P(N = i) = ρ(1-ρ)^i`, `i >= 0`.
    GeometricFailures { rho: f64 },
    Fixed { n: u64 },
    Infinite,
}

impl DurationLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Geometric { rho } | Self::GeometricFailures { rho } => {
                GeomPrior::new(rho).map(|_| ())
            }
            Self::Fixed { n: 0 } => domain("fixed duration must be at least 1"),
            _ => Ok(()),
        }
    }

    /// `None` stands for an infinite duration.
    pub fn sample(&self, rng: &mut RngStream) -> Option<u64> {
        match *self {
            Self::Geometric { rho } => Some(
                GeomPrior::new(rho)
                    .expect("duration law validated")
                    .sample(rng),
            ),
            Self::GeometricFailures { rho } => Some(
                GeomPrior::new(rho)
                    .expect("duration law validated")
                    .sample(rng)
                    - 1,
            ),
            Self::Fixed { n } => Some(n),
            Self::Infinite => None,
        }
    }
}

impl fmt::Display for DurationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Geometric { rho } => write!(f, "geom({rho})"),
            Self::GeometricFailures { rho } => write!(f, "geom0({rho})"),
            Self::Fixed { n } => write!(f, "fixed({n})"),
            Self::Infinite => write!(f, "infinite"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_point() -> LlrModel {
        LlrModel::discrete(vec![0.5, 0.5], vec![0.8, 0.2]).unwrap()
    }

    #[test]
    fn gaussian_llr_values() {
        let m = LlrModel::gaussian(2.0, 1.0).unwrap();
        assert_eq!(m.llr(1.0).unwrap(), 0.0);
        assert_eq!(m.llr(2.0).unwrap(), 2.0);
    }

    #[test]
    fn gaussian_llr_scales_with_sigma() {
        let m = LlrModel::gaussian(2.0, 2.0).unwrap();
        // standardized: theta'=1, y'=1.5 → 1.5 - 0.5
        assert_relative_eq!(m.llr(3.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn discrete_llr_is_table_log_ratio() {
        assert_relative_eq!(two_point().llr(0.0).unwrap(), 1.6f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(two_point().llr(1.0).unwrap(), 0.4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn llr_rejects_bad_input() {
        let m = LlrModel::gaussian(2.0, 1.0).unwrap();
        assert!(m.llr(f64::NAN).is_err());
        assert!(m.llr(f64::INFINITY).is_err());
        assert!(two_point().llr(2.0).is_err());
        assert!(two_point().llr(0.5).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(LlrModel::gaussian(1.0, 0.0).is_err());
        assert!(LlrModel::gaussian(1.0, -1.0).is_err());
        assert!(LlrModel::discrete(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(LlrModel::discrete(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(LlrModel::discrete(vec![0.2; 5], vec![0.2; 5]).is_err());
    }

    #[test]
    fn gaussian_llr_is_increasing() {
        let m = LlrModel::gaussian(1.3, 0.7).unwrap();
        let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.05).collect();
        for w in grid.windows(2) {
            assert!(m.llr(w[1]).unwrap() > m.llr(w[0]).unwrap());
        }
    }

    #[test]
    fn degenerate_noise_post_sample_is_theta() {
        let m = LlrModel::gaussian(2.0, 1e-300).unwrap();
        let mut rng = RngStream::new(1, 1);
        assert_relative_eq!(m.sample(Regime::Post, &mut rng), 2.0, epsilon = 1e-250);
    }

    #[test]
    fn sampling_replays() {
        let m = LlrModel::gaussian(1.0, 1.0).unwrap();
        let a: Vec<f64> = {
            let mut r = RngStream::new(11, 2);
            (0..100).map(|_| m.sample(Regime::Post, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = RngStream::new(11, 2);
            (0..100).map(|_| m.sample(Regime::Post, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn geom_pmf_values() {
        let p = GeomPrior::new(0.1).unwrap();
        assert_relative_eq!(p.pmf(1).unwrap(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(p.pmf(2).unwrap(), 0.09, epsilon = 1e-15);
        assert!(p.pmf(0).is_err());
        let partial: f64 = (1..=500).map(|i| p.pmf(i).unwrap()).sum();
        assert_relative_eq!(partial, 1.0 - 0.9f64.powi(500), epsilon = 1e-13);
        assert!(GeomPrior::new(0.0).is_err());
        assert!(GeomPrior::new(1.0).is_err());
    }

    #[test]
    fn fixed_and_infinite_durations() {
        let mut rng = RngStream::new(0, 0);
        assert_eq!(DurationLaw::Fixed { n: 10 }.sample(&mut rng), Some(10));
        assert_eq!(DurationLaw::Infinite.sample(&mut rng), None);
        assert!(DurationLaw::Fixed { n: 0 }.validate().is_err());
        assert!(DurationLaw::Geometric { rho: 1.5 }.validate().is_err());
    }

    #[test]
    fn failure_count_law_is_shifted_geometric() {
        let law = DurationLaw::GeometricFailures { rho: 0.3 };
        let mut a = RngStream::new(4, 9);
        let mut b = RngStream::new(4, 9);
        let g = DurationLaw::Geometric { rho: 0.3 };
        for _ in 0..1000 {
            assert_eq!(law.sample(&mut a).unwrap() + 1, g.sample(&mut b).unwrap());
        }
        assert_eq!(law.to_string(), "geom0(0.3)");
        assert!(DurationLaw::GeometricFailures { rho: 0.0 }.validate().is_err());
    }

    #[test]
    fn duration_law_serde_shape() {
        let json = serde_json::to_string(&DurationLaw::Geometric { rho: 0.1 }).unwrap();
        assert_eq!(json, r#"{"law":"geometric","rho":0.1}"#);
        let back: DurationLaw = serde_json::from_str(r#"{"law":"fixed","n":5}"#).unwrap();
        assert_eq!(back, DurationLaw::Fixed { n: 5 });
    }
}
