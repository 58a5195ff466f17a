//! Reproduction of the published Gaussian detection-probability tables.
//!
//! All tables use `N(0,1) → N(θ,1)`, a local false-alarm level of `0.001`,
//! calibration at `ℓ = 0` and PD evaluated at `ν = 0`. Thresholds are
//! re-derived by calibration; the published values are carried only for
//! comparison.
//!
//! Two simulation conventions are available (see [`Convention`]). The
//! textbook one cannot produce the published FMA figures: a cold FMA never
//! stops before `L`, so its PD is at most `P(N >= L) = (1-ρ)^(L-1)`, e.g.
//! `0.377` for `ρ = 0.05` against a published `0.6394`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{estimate_pd, CalibrationCache, CalibrationSpec, ExperimentSpec};
use crate::detectors::{FmaForm, FmaStart, Rule};
use crate::error::{domain, Error, Result};
use crate::model::{DurationLaw, LlrModel};
use crate::rng::derive_seed;

/// Absolute tolerance when comparing against published values.
pub const PUBLISHED_TOLERANCE: f64 = 0.02;
pub const TABLE_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TableId {
    I,
    II,
    III,
    IV,
    V,
}

impl TableId {
    pub const ALL: [TableId; 5] = [TableId::I, TableId::II, TableId::III, TableId::IV, TableId::V];

    pub fn caption(&self) -> &'static str {
        match self {
            TableId::I => "modified CUSUM vs FMA, matched parameters",
            TableId::II => "modified CUSUM vs FMA, fixed change duration",
            TableId::III => "modified CUSUM vs FMA, signal-intensity mismatch",
            TableId::IV => "modified CUSUM vs CUSUM, theta = 2.0",
            TableId::V => "modified CUSUM vs CUSUM, theta = 1.2",
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TableId::I => "I",
            TableId::II => "II",
            TableId::III => "III",
            TableId::IV => "IV",
            TableId::V => "V",
        };
        f.write_str(s)
    }
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(TableId::I),
            "II" | "2" => Ok(TableId::II),
            "III" | "3" => Ok(TableId::III),
            "IV" | "4" => Ok(TableId::IV),
            "V" | "5" => Ok(TableId::V),
            _ => domain(format!("unknown table id {s:?} (expected I..V)")),
        }
    }
}

const RHOS: [f64; 3] = [0.2, 0.1, 0.05];

// (theta, m, [mod-cusum by rho], [fma by rho])
const TABLE_I: [(f64, u64, [f64; 3], [f64; 3]); 4] = [
    (2.0, 20, [0.3677, 0.6099, 0.7843], [0.3512, 0.5014, 0.6394]),
    (2.0, 80, [0.3290, 0.5659, 0.7797], [0.3220, 0.4763, 0.6029]),
    (1.2, 20, [0.1510, 0.3547, 0.5641], [0.1424, 0.3142, 0.4738]),
    (1.2, 80, [0.1197, 0.2917, 0.4910], [0.1016, 0.2694, 0.4423]),
];

// (theta, m, [mod-cusum by N], [fma by N]) for N = 5, 10, 20
const TABLE_II: [(f64, u64, [f64; 3], [f64; 3]); 4] = [
    (2.0, 20, [0.6739, 0.9790, 0.998], [0.7454, 0.9956, 0.999]),
    (2.0, 80, [0.5574, 0.9632, 0.998], [0.6246, 0.9880, 0.999]),
    (1.2, 20, [0.0886, 0.4662, 0.9205], [0.1355, 0.5452, 0.9629]),
    (1.2, 80, [0.0383, 0.3356, 0.8666], [0.0739, 0.4023, 0.9203]),
];
const DURATIONS: [u64; 3] = [5, 10, 20];

const TRUE_THETAS: [f64; 6] = [1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
// (assumed theta, [mod-cusum by true theta], [fma by true theta])
const TABLE_III: [(f64, [f64; 6], [f64; 6]); 5] = [
    (
        2.0,
        [0.1654, 0.2742, 0.3870, 0.4772, 0.5517, 0.6091],
        [0.2452, 0.3341, 0.3994, 0.4436, 0.4847, 0.5162],
    ),
    (
        1.8,
        [0.1776, 0.2929, 0.3952, 0.4852, 0.5523, 0.6064],
        [0.2464, 0.3351, 0.3972, 0.4465, 0.4837, 0.5170],
    ),
    (
        1.6,
        [0.1975, 0.3077, 0.4088, 0.4888, 0.5530, 0.6029],
        [0.2467, 0.3338, 0.3992, 0.4461, 0.4846, 0.5178],
    ),
    (
        1.4,
        [0.2099, 0.3193, 0.4109, 0.4851, 0.5454, 0.5925],
        [0.2453, 0.3349, 0.3993, 0.4462, 0.4854, 0.5168],
    ),
    (
        1.2,
        [0.2219, 0.3226, 0.4083, 0.4792, 0.5352, 0.5806],
        [0.2473, 0.3357, 0.3986, 0.4471, 0.4847, 0.5160],
    ),
];

// (m, [mod-cusum by rho], [cusum by rho])
const TABLE_IV: [(u64, [f64; 3], [f64; 3]); 3] = [
    (20, [0.3747, 0.6179, 0.7855], [0.3702, 0.6121, 0.7848]),
    (60, [0.3340, 0.5787, 0.7695], [0.3286, 0.5776, 0.7618]),
    (100, [0.3216, 0.5624, 0.7598], [0.3192, 0.5613, 0.7520]),
];
const TABLE_V: [(u64, [f64; 3], [f64; 3]); 3] = [
    (20, [0.1294, 0.3392, 0.5892], [0.1271, 0.3385, 0.5791]),
    (60, [0.0927, 0.2922, 0.5377], [0.0875, 0.2851, 0.5270]),
    (100, [0.0890, 0.2728, 0.5163], [0.0839, 0.2656, 0.5066]),
];

/// Simulation convention for the table cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Random durations count failures (`N >= 0`) and the FMA window is
    /// primed with `L-1` pre-change observations. Matches the published figures.
    #[default]
    Published,
    /// `N >= 1` and a cold FMA that cannot stop before `L`.
    Literal,
}

impl Convention {
    fn geometric(self, rho: f64) -> DurationLaw {
        match self {
            Convention::Published => DurationLaw::GeometricFailures { rho },
            Convention::Literal => DurationLaw::Geometric { rho },
        }
    }

    fn fma(self, window: usize) -> Rule {
        Rule::Fma {
            window,
            form: FmaForm::Statistic,
            start: match self {
                Convention::Published => FmaStart::Warm,
                Convention::Literal => FmaStart::Cold,
            },
        }
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "published" => Ok(Convention::Published),
            "literal" => Ok(Convention::Literal),
            _ => domain(format!("unknown convention {s:?} (expected published or literal)")),
        }
    }
}

/// One cell of a table: a rule evaluated under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDef {
    pub table: TableId,
    pub cell_id: String,
    pub rule: Rule,
    pub assumed_theta: f64,
    pub true_theta: f64,
    /// Geometric parameter of the configuration (`1/N` for fixed durations).
    pub rho: f64,
    pub m: u64,
    pub window: Option<usize>,
    pub duration: DurationLaw,
    pub published: f64,
}

fn window_for(rho: f64) -> usize {
    (1.0 / rho).round() as usize
}

/// Every cell of a table, in publication order.
pub fn cells(table: TableId, convention: Convention) -> Vec<CellDef> {
    let fma = |window| convention.fma(window);
    let mut out = Vec::new();
    let mut push = |cell_id: String,
                    rule: Rule,
                    assumed_theta: f64,
                    true_theta: f64,
                    rho: f64,
                    m: u64,
                    duration: DurationLaw,
                    published: f64| {
        let window = match &rule {
            Rule::Fma { window, .. } | Rule::WlCusum { window, .. } => Some(*window),
            _ => None,
        };
        out.push(CellDef {
            table,
            cell_id,
            rule,
            assumed_theta,
            true_theta,
            rho,
            m,
            window,
            duration,
            published,
        });
    };
    match table {
        TableId::I => {
            for (theta, m, pd_mod, pd_fma) in TABLE_I {
                for (i, rho) in RHOS.into_iter().enumerate() {
                    let id = format!("theta={theta:.1};m={m};rho={rho}");
                    let law = convention.geometric(rho);
                    push(id.clone(), Rule::ModCusum { rho }, theta, theta, rho, m, law, pd_mod[i]);
                    push(id, fma(window_for(rho)), theta, theta, rho, m, law, pd_fma[i]);
                }
            }
        }
        TableId::II => {
            for (theta, m, pd_mod, pd_fma) in TABLE_II {
                for (i, n) in DURATIONS.into_iter().enumerate() {
                    let rho = 1.0 / n as f64;
                    let id = format!("theta={theta:.1};m={m};N={n}");
                    let law = DurationLaw::Fixed { n };
                    push(id.clone(), Rule::ModCusum { rho }, theta, theta, rho, m, law, pd_mod[i]);
                    push(id, fma(n as usize), theta, theta, rho, m, law, pd_fma[i]);
                }
            }
        }
        TableId::III => {
            let rho = 0.1;
            let law = convention.geometric(rho);
            for (theta, pd_mod, pd_fma) in TABLE_III {
                for (i, theta_r) in TRUE_THETAS.into_iter().enumerate() {
                    let id = format!("theta={theta:.1};theta_r={theta_r:.1}");
                    push(id.clone(), Rule::ModCusum { rho }, theta, theta_r, rho, 20, law, pd_mod[i]);
                    push(id, fma(10), theta, theta_r, rho, 20, law, pd_fma[i]);
                }
            }
        }
        TableId::IV | TableId::V => {
            let (theta, rows) = if table == TableId::IV {
                (2.0, TABLE_IV)
            } else {
                (1.2, TABLE_V)
            };
            for (m, pd_mod, pd_cs) in rows {
                for (i, rho) in RHOS.into_iter().enumerate() {
                    let id = format!("m={m};rho={rho}");
                    let law = convention.geometric(rho);
                    push(id.clone(), Rule::ModCusum { rho }, theta, theta, rho, m, law, pd_mod[i]);
                    push(id, Rule::Cusum, theta, theta, rho, m, law, pd_cs[i]);
                }
            }
        }
    }
    out
}

/// Replication counts and seed for a table run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub pd_replications: u64,
    pub calibration_replications: u64,
    pub seed: u64,
    #[serde(default)]
    pub convention: Convention,
}

impl TableConfig {
    pub fn new(pd_replications: u64, calibration_replications: u64, seed: u64) -> Self {
        Self {
            pd_replications,
            calibration_replications,
            seed,
            convention: Convention::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pd_replications == 0 {
            return domain("PD replications must be at least 1");
        }
        if (self.calibration_replications as f64) < 10.0 / TABLE_ALPHA {
            return domain(format!(
                "calibration replications must be at least {}",
                10.0 / TABLE_ALPHA
            ));
        }
        Ok(())
    }
}

/// One row of the reproduction CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub table: String,
    pub cell_id: String,
    pub rule: String,
    pub assumed_theta: f64,
    pub true_theta: f64,
    pub rho: f64,
    pub m: u64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub window: Option<usize>,
    pub duration_law: String,
    pub pd_hat: f64,
    pub se: f64,
    pub paper_value: f64,
    pub pass: bool,
    #[serde(skip)]
    pub threshold: f64,
    #[serde(skip)]
    pub replications: u64,
}

impl CellResult {
    pub fn estimate(&self) -> super::PdEstimate {
        super::PdEstimate {
            pd_hat: self.pd_hat,
            std_error: self.se,
            replications: self.replications,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableReport {
    pub table: TableId,
    pub rows: Vec<CellResult>,
}

impl TableReport {
    pub fn find(&self, cell_id: &str, rule: &str) -> Option<&CellResult> {
        self.rows
            .iter()
            .find(|r| r.cell_id == cell_id && r.rule == rule)
    }

    /// Distinct configurations in publication order.
    pub fn cell_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.cell_id.as_str()) {
                ids.push(&r.cell_id);
            }
        }
        ids
    }

    pub fn write_csv<W: Write>(&self, out: W, with_header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(with_header)
            .from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeds shared by every table of a run: all calibrations see the same
/// pre-change paths and all PD cells the same post-change paths.
pub fn run_seeds(master: u64) -> (u64, u64) {
    (derive_seed(master, "calibration"), derive_seed(master, "pd"))
}

pub fn reproduce_table(
    table: TableId,
    cfg: &TableConfig,
    cache: &CalibrationCache,
) -> Result<TableReport> {
    cfg.validate()?;
    let (calibration_seed, pd_seed) = run_seeds(cfg.seed);
    let mut rows = Vec::new();
    for cell in cells(table, cfg.convention) {
        let model = LlrModel::gaussian(cell.assumed_theta, 1.0)?;
        let calibration =
            CalibrationSpec::new(TABLE_ALPHA, cell.m, cfg.calibration_replications, calibration_seed);
        let cal = cache.get_or_calibrate(&cell.rule, &calibration, &model)?;
        let spec = ExperimentSpec {
            model,
            true_theta: Some(cell.true_theta),
            duration: cell.duration,
            rho_tuning: cell.rho,
            fma_window: cell.window.unwrap_or(1),
            fma_start: match &cell.rule {
                Rule::Fma { start, .. } => *start,
                _ => FmaStart::Cold,
            },
            calibration,
            replications: cfg.pd_replications,
            seed: pd_seed,
            changepoint: 0,
        };
        let pd = estimate_pd(&cell.rule, cal.threshold, &spec)?;
        rows.push(CellResult {
            table: table.to_string(),
            cell_id: cell.cell_id,
            rule: cell.rule.name().to_string(),
            assumed_theta: cell.assumed_theta,
            true_theta: cell.true_theta,
            rho: cell.rho,
            m: cell.m,
            alpha: TABLE_ALPHA,
            window: cell.window,
            duration_law: cell.duration.to_string(),
            pd_hat: pd.pd_hat,
            se: pd.std_error,
            paper_value: cell.published,
            pass: (pd.pd_hat - cell.published).abs() <= PUBLISHED_TOLERANCE,
            threshold: cal.threshold,
            replications: pd.replications,
        });
    }
    Ok(TableReport { table, rows })
}
