//! Sequential stopping rules as incremental state machines.
//!
//! Each detector consumes one increment per step (an LLR, or for the FMA in
//! statistic form a monotone transform of the observation) and reports
//! whether it has stopped. A detector compares a *decision statistic* with a
//! threshold expressed in the same units and stops at the first eligible step
//! where `statistic >= threshold`:
//!
//! | rule            | decision statistic                         | threshold |
//! |-----------------|--------------------------------------------|-----------|
//! | modified CUSUM  | `log V_ρ(n)`                               | `log B`   |
//! | CUSUM           | `log V(n)`                                 | `log C`   |
//! | FMA             | sum of the last `L` increments (`n >= L`)  | `a` / `ã` |
//! | FMA, warm start | same, window primed with `L-1` increments  | `a` / `ã` |
//! | WL-CUSUM        | `max_k [S_k(n) - shape(k)]` (`n >= L`)     | level `h` |
//!
//! The trajectory of the decision statistic never depends on the threshold,
//! which is what makes common-random-number calibration cheap.
//!
//! Once stopped a detector is frozen; further steps are a usage error until
//! [`Detector::reset`] is called.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::LlrModel;

/// Outcome of a single step (or of a whole run).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopReport {
    /// First time the rule stopped, if it has.
    pub stop_time: Option<u64>,
    /// Decision statistic at the reporting step.
    pub statistic: f64,
}

impl StopReport {
    pub fn stopped(&self) -> bool {
        self.stop_time.is_some()
    }
}

pub trait Detector {
    /// Feed one increment.
    fn observe(&mut self, increment: f64) -> Result<StopReport>;

    /// Number of increments consumed since the last reset.
    fn steps(&self) -> u64;

    fn is_stopped(&self) -> bool;

    /// Current decision statistic, `None` while the rule cannot stop yet (`n < L`).
    fn decision_statistic(&self) -> Option<f64>;

    /// Threshold in decision-statistic units.
    fn threshold(&self) -> f64;

    /// Earliest possible stopping time.
    fn min_stop_time(&self) -> u64 {
        1
    }

    fn reset(&mut self);
}

fn check_increment(x: f64) -> Result<()> {
    if x.is_nan() {
        return domain("increment is NaN");
    }
    Ok(())
}

fn stepped_after_stop(n: u64) -> Error {
    Error::Usage(format!("detector already stopped at n={n}; reset before reuse"))
}

fn log_threshold(t: f64, name: &str) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("threshold {name} must be positive, got {t}"));
    }
    Ok(t.ln())
}

/// Modified CUSUM: `V_ρ(n) = max{1, V_ρ(n-1)} Λ_n (1-ρ)`, `V_ρ(0) = 1`,
/// stopping at the first `n` with `V_ρ(n) >= B`.
///
/// Kept in the log domain, `w = log V`: `w' = max(0, w) + λ + log(1-ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedCusum {
    rho: f64,
    log_discount: f64,
    log_threshold: f64,
    w: f64,
    n: u64,
    stopped: bool,
}

impl ModifiedCusum {
    pub fn new(rho: f64, threshold_b: f64) -> Result<Self> {
        Self::with_log_threshold(rho, log_threshold(threshold_b, "B")?)
    }

    pub fn with_log_threshold(rho: f64, log_b: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return domain(format!("rho {rho} outside [0,1)"));
        }
        if log_b.is_nan() {
            return domain("log threshold is NaN");
        }
        Ok(Self {
            rho,
            log_discount: (1.0 - rho).ln(),
            log_threshold: log_b,
            w: 0.0,
            n: 0,
            stopped: false,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `V_ρ(n)`; may overflow to infinity for long runs, the log form does not.
    pub fn statistic(&self) -> f64 {
        self.w.exp()
    }

    pub fn log_statistic(&self) -> f64 {
        self.w
    }
}

impl Detector for ModifiedCusum {
    fn observe(&mut self, llr: f64) -> Result<StopReport> {
        if self.stopped {
            return Err(stepped_after_stop(self.n));
        }
        check_increment(llr)?;
        self.n += 1;
        self.w = self.w.max(0.0) + llr + self.log_discount;
        self.stopped = self.w >= self.log_threshold;
        Ok(StopReport {
            stop_time: self.stopped.then_some(self.n),
            statistic: self.w,
        })
    }

    fn steps(&self) -> u64 {
        self.n
    }

    fn is_stopped(&self) -> bool {
        self.stopped
    }

    fn decision_statistic(&self) -> Option<f64> {
        (self.n > 0).then_some(self.w)
    }

    fn threshold(&self) -> f64 {
        self.log_threshold
    }

    fn reset(&mut self) {
        self.w = 0.0;
        self.n = 0;
        self.stopped = false;
    }
}

/// Page's CUSUM: `V(n) = max{1, V(n-1)} Λ_n`, stopping when `V(n) >= C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cusum {
    log_threshold: f64,
    w: f64,
    n: u64,
    stopped: bool,
}

impl Cusum {
    pub fn new(threshold_c: f64) -> Result<Self> {
        Self::with_log_threshold(log_threshold(threshold_c, "C")?)
    }

    pub fn with_log_threshold(log_c: f64) -> Result<Self> {
        if log_c.is_nan() {
            return domain("log threshold is NaN");
        }
        Ok(Self {
            log_threshold: log_c,
            w: 0.0,
            n: 0,
            stopped: false,
        })
    }

    pub fn statistic(&self) -> f64 {
        self.w.exp()
    }

    pub fn log_statistic(&self) -> f64 {
        self.w
    }
}

impl Detector for Cusum {
    fn observe(&mut self, llr: f64) -> Result<StopReport> {
        if self.stopped {
            return Err(stepped_after_stop(self.n));
        }
        check_increment(llr)?;
        self.n += 1;
        self.w = self.w.max(0.0) + llr;
        self.stopped = self.w >= self.log_threshold;
        Ok(StopReport {
            stop_time: self.stopped.then_some(self.n),
            statistic: self.w,
        })
    }

    fn steps(&self) -> u64 {
        self.n
    }

    fn is_stopped(&self) -> bool {
        self.stopped
    }

    fn decision_statistic(&self) -> Option<f64> {
        (self.n > 0).then_some(self.w)
    }

    fn threshold(&self) -> f64 {
        self.log_threshold
    }

    fn reset(&mut self) {
        self.w = 0.0;
        self.n = 0;
        self.stopped = false;
    }
}

/// What the FMA sums: log-likelihood ratios (threshold `a`) or a monotone
/// statistic of the observations (threshold `ã`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FmaForm {
    Llr,
    #[default]
    Statistic,
}

/// How an FMA window is filled at time 1.
///
/// `Cold` is the textbook rule `inf{n >= L : ...}`. `Warm` primes the window
/// with `L-1` increments observed before the origin, so the rule can stop
/// from `n = 1` on a full window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FmaStart {
    #[default]
    Cold,
    Warm,
}

/// Finite moving average: stop at the first `n >= L` whose last `L` increments sum to at least the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Fma {
    window: Vec<f64>,
    head: usize,
    sum: f64,
    threshold: f64,
    form: FmaForm,
    primed: u64,
    n: u64,
    stopped: bool,
}

impl Fma {
    pub fn new(window_len: usize, threshold: f64, form: FmaForm) -> Result<Self> {
        if window_len == 0 {
            return domain("FMA window length must be at least 1");
        }
        if threshold.is_nan() {
            return domain("FMA threshold is NaN");
        }
        Ok(Self {
            window: vec![0.0; window_len],
            head: 0,
            sum: 0.0,
            threshold,
            form,
            primed: 0,
            n: 0,
            stopped: false,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Push an increment observed before time 1. Does not advance `n` and never stops.
    pub fn prime(&mut self, x: f64) -> Result<()> {
        if self.n > 0 {
            return Err(Error::Usage("FMA can only be primed before the first step".into()));
        }
        check_increment(x)?;
        self.push(x);
        self.primed += 1;
        Ok(())
    }

    /// Increments pushed by [`Fma::prime`] since the last reset.
    pub fn primed(&self) -> u64 {
        self.primed
    }

    fn push(&mut self, x: f64) {
        let old = std::mem::replace(&mut self.window[self.head], x);
        self.sum += x - old;
        self.head += 1;
        if self.head == self.window.len() {
            self.head = 0;
            // refresh once per lap so rounding error cannot accumulate
            self.sum = self.recomputed_sum();
        }
    }

    fn full(&self) -> bool {
        self.n + self.primed >= self.window.len() as u64
    }

    pub fn form(&self) -> FmaForm {
        self.form
    }

    /// Running sum of the buffered increments.
    pub fn window_sum(&self) -> f64 {
        self.sum
    }

    /// Sum recomputed from the buffer contents.
    pub fn recomputed_sum(&self) -> f64 {
        self.window.iter().sum()
    }
}

impl Detector for Fma {
    fn observe(&mut self, x: f64) -> Result<StopReport> {
        if self.stopped {
            return Err(stepped_after_stop(self.n));
        }
        check_increment(x)?;
        self.push(x);
        self.n += 1;
        self.stopped = self.full() && self.sum >= self.threshold;
        Ok(StopReport {
            stop_time: self.stopped.then_some(self.n),
            statistic: self.sum,
        })
    }

    fn steps(&self) -> u64 {
        self.n
    }

    fn is_stopped(&self) -> bool {
        self.stopped
    }

    fn decision_statistic(&self) -> Option<f64> {
        (self.n > 0 && self.full()).then_some(self.sum)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn min_stop_time(&self) -> u64 {
        (self.window.len() as u64).saturating_sub(self.primed).max(1)
    }

    fn reset(&mut self) {
        self.window.iter_mut().for_each(|v| *v = 0.0);
        self.head = 0;
        self.sum = 0.0;
        self.primed = 0;
        self.n = 0;
        self.stopped = false;
    }
}

/// Window-limited CUSUM: stop at the first `n >= L` with
/// `max_{1<=k<=L} [Σ_{t=n-k+1..n} λ_t - A(k)] >= 0`.
///
/// `A(k)` is stored as `level + shape[k-1]`; the decision statistic is
/// `max_k [S_k - shape[k-1]]` and is compared against `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct WlCusum {
    window: Vec<f64>,
    head: usize,
    shape: Vec<f64>,
    level: f64,
    stat: f64,
    n: u64,
    stopped: bool,
}

impl WlCusum {
    /// `thresholds[k-1] = A(k)` for `k = 1..=L`.
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        Self::with_shape(thresholds, 0.0)
    }

    /// Constant threshold `A(k) = a`.
    pub fn constant(window_len: usize, a: f64) -> Result<Self> {
        Self::with_shape(vec![0.0; window_len], a)
    }

    pub fn with_shape(shape: Vec<f64>, level: f64) -> Result<Self> {
        if shape.is_empty() {
            return domain("WL-CUSUM window length must be at least 1");
        }
        if shape.iter().any(|a| !a.is_finite()) {
            return domain("WL-CUSUM threshold map must be finite for every lag");
        }
        if level.is_nan() {
            return domain("WL-CUSUM level is NaN");
        }
        Ok(Self {
            window: vec![0.0; shape.len()],
            head: 0,
            shape,
            level,
            stat: f64::NEG_INFINITY,
            n: 0,
            stopped: false,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// `A(k)` for `k = 1..=L`.
    pub fn threshold_at(&self, k: usize) -> f64 {
        self.level + self.shape[k - 1]
    }

    fn suffix_max(&self) -> f64 {
        let len = self.window.len();
        let mut suffix = 0.0;
        let mut best = f64::NEG_INFINITY;
        for k in 1..=len {
            let idx = (self.head + len - k) % len;
            suffix += self.window[idx];
            best = best.max(suffix - self.shape[k - 1]);
        }
        best
    }
}

impl Detector for WlCusum {
    fn observe(&mut self, llr: f64) -> Result<StopReport> {
        if self.stopped {
            return Err(stepped_after_stop(self.n));
        }
        check_increment(llr)?;
        self.window[self.head] = llr;
        self.head = (self.head + 1) % self.window.len();
        self.n += 1;
        if self.n >= self.window.len() as u64 {
            self.stat = self.suffix_max();
            self.stopped = self.stat >= self.level;
        }
        Ok(StopReport {
            stop_time: self.stopped.then_some(self.n),
            statistic: self.stat,
        })
    }

    fn steps(&self) -> u64 {
        self.n
    }

    fn is_stopped(&self) -> bool {
        self.stopped
    }

    fn decision_statistic(&self) -> Option<f64> {
        (self.n >= self.window.len() as u64).then_some(self.stat)
    }

    fn threshold(&self) -> f64 {
        self.level
    }

    fn min_stop_time(&self) -> u64 {
        self.window.len() as u64
    }

    fn reset(&mut self) {
        self.window.iter_mut().for_each(|v| *v = 0.0);
        self.head = 0;
        self.stat = f64::NEG_INFINITY;
        self.n = 0;
        self.stopped = false;
    }
}

/// Enum dispatch over the four rules.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDetector {
    ModifiedCusum(ModifiedCusum),
    Cusum(Cusum),
    Fma(Fma),
    WlCusum(WlCusum),
}

macro_rules! dispatch {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            AnyDetector::ModifiedCusum($d) => $e,
            AnyDetector::Cusum($d) => $e,
            AnyDetector::Fma($d) => $e,
            AnyDetector::WlCusum($d) => $e,
        }
    };
}

impl AnyDetector {
    /// Feed an increment observed before time 1; only a warm FMA accepts one.
    pub fn prime(&mut self, increment: f64) -> Result<()> {
        match self {
            AnyDetector::Fma(d) => d.prime(increment),
            _ => Err(Error::Usage("only the FMA window can be primed".into())),
        }
    }
}

impl Detector for AnyDetector {
    fn observe(&mut self, increment: f64) -> Result<StopReport> {
        dispatch!(self, d => d.observe(increment))
    }
    fn steps(&self) -> u64 {
        dispatch!(self, d => d.steps())
    }
    fn is_stopped(&self) -> bool {
        dispatch!(self, d => d.is_stopped())
    }
    fn decision_statistic(&self) -> Option<f64> {
        dispatch!(self, d => d.decision_statistic())
    }
    fn threshold(&self) -> f64 {
        dispatch!(self, d => d.threshold())
    }
    fn min_stop_time(&self) -> u64 {
        dispatch!(self, d => d.min_stop_time())
    }
    fn reset(&mut self) {
        dispatch!(self, d => d.reset())
    }
}

/// A rule family with its threshold left free.
///
/// Thresholds handed to [`Rule::build`] are in decision-statistic units:
/// `log B` / `log C` for the CUSUM variants, `a` or `ã` for the FMA, the
/// level `h` for WL-CUSUM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    ModCusum {
        rho: f64,
    },
    Cusum,
    Fma {
        window: usize,
        #[serde(default)]
        form: FmaForm,
        #[serde(default)]
        start: FmaStart,
    },
    WlCusum {
        window: usize,
        /// `A(k) - h` for `k = 1..=L`; empty means a constant threshold.
        #[serde(default)]
        shape: Vec<f64>,
    },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::ModCusum { .. } => "mod-cusum",
            Rule::Cusum => "cusum",
            Rule::Fma { .. } => "fma",
            Rule::WlCusum { .. } => "wl-cusum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.build(0.0).map(|_| ())
    }

    pub fn build(&self, threshold: f64) -> Result<AnyDetector> {
        Ok(match self {
            Rule::ModCusum { rho } => {
                AnyDetector::ModifiedCusum(ModifiedCusum::with_log_threshold(*rho, threshold)?)
            }
            Rule::Cusum => AnyDetector::Cusum(Cusum::with_log_threshold(threshold)?),
            Rule::Fma { window, form, .. } => AnyDetector::Fma(Fma::new(*window, threshold, *form)?),
            Rule::WlCusum { window, shape } => {
                let shape = if shape.is_empty() {
                    vec![0.0; *window]
                } else if shape.len() == *window {
                    shape.clone()
                } else {
                    return domain(format!(
                        "WL-CUSUM threshold map has {} lags, window is {window}",
                        shape.len()
                    ));
                };
                AnyDetector::WlCusum(WlCusum::with_shape(shape, threshold)?)
            }
        })
    }

    /// Converts observations into the increments the rule consumes.
    pub fn increment_map(&self, model: &LlrModel) -> IncrementMap {
        let use_statistic = matches!(
            self,
            Rule::Fma {
                form: FmaForm::Statistic,
                ..
            }
        );
        match model {
            LlrModel::Gaussian { theta, sigma } => {
                if use_statistic {
                    let sign = if *theta < 0.0 { -1.0 } else { 1.0 };
                    IncrementMap::Affine {
                        scale: sign / sigma,
                        offset: 0.0,
                    }
                } else {
                    let s2 = sigma * sigma;
                    IncrementMap::Affine {
                        scale: theta / s2,
                        offset: -theta * theta / (2.0 * s2),
                    }
                }
            }
            LlrModel::Discrete(d) => IncrementMap::Table(
                (0..d.alphabet_size()).map(|k| d.llr_of_symbol(k)).collect(),
            ),
        }
    }

    /// Cold FMA with the given window and form.
    pub fn fma(window: usize, form: FmaForm) -> Self {
        Rule::Fma {
            window,
            form,
            start: FmaStart::Cold,
        }
    }

    /// Pre-origin increments to feed through [`AnyDetector::prime`] before time 1.
    pub fn warm_up(&self) -> usize {
        match self {
            Rule::Fma {
                window,
                start: FmaStart::Warm,
                ..
            } => window - 1,
            _ => 0,
        }
    }

    /// Earliest time at which the rule can stop.
    pub fn min_stop_time(&self) -> u64 {
        match self {
            Rule::Fma {
                start: FmaStart::Warm,
                ..
            } => 1,
            Rule::Fma { window, .. } | Rule::WlCusum { window, .. } => *window as u64,
            _ => 1,
        }
    }
}

/// Precomputed observation → increment map for hot loops.
#[derive(Debug, Clone, PartialEq)]
pub enum IncrementMap {
    Affine { scale: f64, offset: f64 },
    Table(Vec<f64>),
}

impl IncrementMap {
    #[inline]
    pub fn apply(&self, y: f64) -> f64 {
        match self {
            IncrementMap::Affine { scale, offset } => scale * y + offset,
            IncrementMap::Table(t) => t[y as usize],
        }
    }
}

/// Feed increments until the detector stops or `cap` steps have been taken.
pub fn run_to_stop<D, I>(detector: &mut D, increments: I, cap: u64) -> Result<StopReport>
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = f64>,
{
    if cap == 0 {
        return domain("cap must be at least 1");
    }
    let mut last = StopReport {
        stop_time: None,
        statistic: detector.decision_statistic().unwrap_or(f64::NEG_INFINITY),
    };
    for x in increments.into_iter().take(cap as usize) {
        last = detector.observe(x)?;
        if last.stopped() {
            break;
        }
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn modified_cusum_first_step() {
        let mut d = ModifiedCusum::new(0.1, 100.0).unwrap();
        d.observe(2f64.ln()).unwrap();
        assert_relative_eq!(d.statistic(), 1.8, epsilon = 1e-14);
    }

    #[test]
    fn cusum_first_step_below_one() {
        let mut d = Cusum::new(0.6).unwrap();
        let r = d.observe(0.5f64.ln()).unwrap();
        assert_relative_eq!(d.statistic(), 0.5, epsilon = 1e-15);
        assert!(!r.stopped());
    }

    #[test]
    fn cusum_floor_keeps_statistic_above_likelihood_ratio() {
        let mut d = Cusum::new(1e9).unwrap();
        for lam in [-1.0, -2.0, 0.3, -0.1] {
            let before = d.statistic();
            d.observe(lam).unwrap();
            if before <= 1.0 {
                assert!(d.statistic() >= lam.exp() * (1.0 - 1e-15));
            }
        }
    }

    #[test]
    fn stop_uses_greater_or_equal() {
        let mut d = Cusum::with_log_threshold(1.0).unwrap();
        let r = d.observe(1.0).unwrap();
        assert_eq!(r.stop_time, Some(1));
    }

    #[test]
    fn step_after_stop_is_usage_error() {
        let mut d = ModifiedCusum::new(0.1, 1e-300).unwrap();
        assert!(d.observe(0.0).unwrap().stopped());
        assert!(matches!(d.observe(0.0), Err(Error::Usage(_))));
        d.reset();
        assert!(d.observe(0.0).is_ok());

        let mut f = Fma::new(1, -1.0, FmaForm::Llr).unwrap();
        f.observe(0.0).unwrap();
        assert!(matches!(f.observe(0.0), Err(Error::Usage(_))));
        let mut w = WlCusum::constant(1, -1.0).unwrap();
        w.observe(0.0).unwrap();
        assert!(matches!(w.observe(0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn invalid_parameters() {
        assert!(ModifiedCusum::new(1.0, 2.0).is_err());
        assert!(ModifiedCusum::new(-0.1, 2.0).is_err());
        assert!(ModifiedCusum::new(0.1, 0.0).is_err());
        assert!(Cusum::new(-1.0).is_err());
        assert!(Fma::new(0, 1.0, FmaForm::Llr).is_err());
        assert!(WlCusum::new(vec![]).is_err());
        assert!(WlCusum::new(vec![1.0, f64::NAN]).is_err());
        assert!(Rule::WlCusum {
            window: 3,
            shape: vec![0.0; 2]
        }
        .validate()
        .is_err());
        let mut d = Cusum::new(2.0).unwrap();
        assert!(d.observe(f64::NAN).is_err());
    }

    #[test]
    fn fma_first_full_window() {
        let mut d = Fma::new(3, 14.0, FmaForm::Llr).unwrap();
        let r = run_to_stop(&mut d, [5.0, 5.0, 5.0], 10).unwrap();
        assert_eq!(r.stop_time, Some(3));
        assert_eq!(r.statistic, 15.0);
    }

    #[test]
    fn fma_does_not_test_before_full_window() {
        let mut d = Fma::new(3, 14.0, FmaForm::Llr).unwrap();
        assert!(!d.observe(10.0).unwrap().stopped());
        assert!(!d.observe(10.0).unwrap().stopped());
        let r3 = d.observe(-100.0).unwrap();
        assert!(!r3.stopped());
        assert_eq!(r3.statistic, -80.0);
        let r4 = d.observe(10.0).unwrap();
        assert!(!r4.stopped());
        assert_eq!(r4.statistic, -80.0);
    }

    #[test]
    fn warm_fma_can_stop_at_first_step() {
        let mut d = Fma::new(3, 14.0, FmaForm::Llr).unwrap();
        d.prime(5.0).unwrap();
        d.prime(5.0).unwrap();
        assert_eq!(d.min_stop_time(), 1);
        let r = d.observe(5.0).unwrap();
        assert_eq!(r.stop_time, Some(1));
        assert_eq!(r.statistic, 15.0);
        assert!(matches!(d.prime(1.0), Err(Error::Usage(_))));
        d.reset();
        assert_eq!(d.primed(), 0);
        assert!(!d.observe(5.0).unwrap().stopped());
        let warm = Rule::Fma {
            window: 3,
            form: FmaForm::Llr,
            start: FmaStart::Warm,
        };
        assert_eq!(warm.warm_up(), 2);
        assert_eq!(warm.min_stop_time(), 1);
        assert_eq!(Rule::fma(3, FmaForm::Llr).warm_up(), 0);
        assert!(Rule::Cusum.build(1.0).unwrap().prime(0.0).is_err());
    }

    #[test]
    fn wl_cusum_direct_evaluation() {
        let mut d = WlCusum::new(vec![2.5, 1.5]).unwrap();
        assert!(!d.observe(3.0).unwrap().stopped());
        let r = d.observe(-1.0).unwrap();
        assert_eq!(r.stop_time, Some(2));
        assert_relative_eq!(r.statistic - d.threshold(), 0.5, epsilon = 1e-15);
        assert_eq!(d.threshold_at(1), 2.5);
        assert_eq!(d.threshold_at(2), 1.5);
    }

    #[test]
    fn unreachable_and_trivial_thresholds() {
        let incs = vec![0.5; 1000];
        let mut d = ModifiedCusum::new(0.1, 1e308).unwrap();
        assert!(!run_to_stop(&mut d, incs.iter().copied(), 1000).unwrap().stopped());
        let mut d = ModifiedCusum::new(0.1, 1e-308).unwrap();
        assert_eq!(
            run_to_stop(&mut d, incs.iter().copied(), 1000).unwrap().stop_time,
            Some(1)
        );
    }

    #[test]
    fn run_to_stop_edge_cases() {
        let mut d = Cusum::new(10.0).unwrap();
        let r = run_to_stop(&mut d, std::iter::empty(), 5).unwrap();
        assert!(!r.stopped());
        assert!(run_to_stop(&mut d, [1.0], 0).is_err());
        let r = run_to_stop(&mut d, std::iter::repeat(0.1), 7).unwrap();
        assert!(!r.stopped());
        assert_eq!(d.steps(), 7);
    }

    #[test]
    fn rule_build_dispatches() {
        let r = Rule::fma(4, FmaForm::Llr);
        let d = r.build(1.0).unwrap();
        assert_eq!(d.min_stop_time(), 4);
        assert_eq!(r.min_stop_time(), 4);
        assert_eq!(d.threshold(), 1.0);
        let json = serde_json::to_string(&Rule::ModCusum { rho: 0.1 }).unwrap();
        assert_eq!(json, r#"{"rule":"mod-cusum","rho":0.1}"#);
    }

    #[test]
    fn increment_map_matches_model() {
        let m = LlrModel::gaussian(1.5, 2.0).unwrap();
        let llr_map = Rule::Cusum.increment_map(&m);
        let stat_map = Rule::fma(2, FmaForm::Statistic).increment_map(&m);
        for y in [-3.0, 0.0, 0.4, 5.5] {
            assert_relative_eq!(llr_map.apply(y), m.llr(y).unwrap(), epsilon = 1e-14);
            assert_relative_eq!(
                stat_map.apply(y),
                m.monotone_statistic(y).unwrap(),
                epsilon = 1e-14
            );
        }
        let dm = LlrModel::discrete(vec![0.5, 0.5], vec![0.8, 0.2]).unwrap();
        let map = Rule::Cusum.increment_map(&dm);
        assert_relative_eq!(map.apply(0.0), 1.6f64.ln());
    }
}
