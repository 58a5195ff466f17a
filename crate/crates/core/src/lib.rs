//! Sequential detection of transient changes.
//!
//! Stopping rules for a change that lasts a random, finite duration:
//! the modified CUSUM, CUSUM, finite moving average and window-limited
//! CUSUM, with Monte Carlo calibration under a local false-alarm
//! constraint, an exact enumeration oracle for small discrete models and
//! a synthetic streak detection pipeline built on the same machinery.

pub mod detectors;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod rng;
pub mod streak;

pub use detectors::{
    AnyDetector, Cusum, Detector, Fma, FmaForm, FmaStart, ModifiedCusum, Rule, StopReport, WlCusum,
};
pub use error::{Error, Result};
pub use model::{DiscreteModel, DurationLaw, GeomPrior, LlrModel, Regime};
pub use montecarlo::{CalibrationSpec, ExperimentSpec, LpfaMode, PdEstimate};
pub use rng::RngStream;
