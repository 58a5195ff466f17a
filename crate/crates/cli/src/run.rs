use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use tdet::detectors::{FmaForm, FmaStart, Rule};
use tdet::model::{DurationLaw, LlrModel};
use tdet::montecarlo::tables::{self, Convention, TableConfig, TableId, TABLE_ALPHA};
use tdet::montecarlo::{
    calibrate_threshold, estimate_arl, estimate_pd, gamma_bound, run_mismatch_study, ArlEstimate,
    CalibrationCache, CalibrationSpec, ExperimentSpec, LpfaMode, MismatchGrid, PdEstimate,
};

use crate::args::*;
use crate::config::*;

const DEFAULT_SEED: u64 = 1;
const DEFAULT_CAL_REPS: u64 = 1_000_000;
const DEFAULT_PD_REPS: u64 = 100_000;

/// Writes `bytes` to `path`, or to stdout when there is no path.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Other(format!("{}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Other(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

impl RuleArgs {
    fn model(&self) -> CliResult<LlrModel> {
        let theta = required(self.theta, "theta")?;
        if !theta.is_finite() || theta == 0.0 {
            return config_err(format!("--theta {theta}: must be finite and nonzero"));
        }
        let sigma = check_positive(self.sigma.unwrap_or(1.0), "sigma")?;
        Ok(LlrModel::gaussian(theta, sigma)?)
    }

    fn rule(&self) -> CliResult<Rule> {
        let window = || -> CliResult<usize> {
            let l = required(self.window, "L")?;
            check_nonzero(l as u64, "L")?;
            Ok(l)
        };
        Ok(match required(self.rule, "rule")? {
            RuleName::ModCusum => {
                let rho = required(self.rho, "rho")?;
                if !(0.0..1.0).contains(&rho) {
                    return config_err(format!("--rho {rho}: must lie in [0, 1)"));
                }
                Rule::ModCusum { rho }
            }
            RuleName::Cusum => Rule::Cusum,
            RuleName::Fma => Rule::Fma {
                window: window()?,
                form: match self.form {
                    Some(FormName::Llr) => FmaForm::Llr,
                    _ => FmaForm::Statistic,
                },
                start: match self.start {
                    Some(StartName::Warm) => FmaStart::Warm,
                    _ => FmaStart::Cold,
                },
            },
            RuleName::WlCusum => Rule::WlCusum {
                window: window()?,
                shape: Vec::new(),
            },
        })
    }
}

fn lpfa_mode(mode: Option<ModeName>, ell_max: Option<u64>, m: u64) -> LpfaMode {
    match mode {
        Some(ModeName::Sup) => LpfaMode::SupOverEll {
            ell_max: ell_max.unwrap_or(20 * m),
        },
        _ => LpfaMode::Origin,
    }
}

fn calibration_spec(
    alpha: Option<f64>,
    m: Option<u64>,
    reps: u64,
    seed: u64,
    mode: LpfaMode,
) -> CliResult<CalibrationSpec> {
    let alpha = check_open_unit(required(alpha, "alpha")?, "alpha")?;
    let m = check_nonzero(required(m, "m")?, "m")?;
    let mut spec = CalibrationSpec::new(alpha, m, reps, seed);
    spec.mode = mode;
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct CalibrateOutput {
    command: &'static str,
    rule: Rule,
    model: LlrModel,
    m: u64,
    alpha: f64,
    mode: LpfaMode,
    replications: u64,
    seed: u64,
    threshold: f64,
    lpfa: f64,
    lpfa_se: f64,
    iterations: u32,
    within_tolerance: bool,
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<()> {
    let a: CalibrateArgs = resolve(a, a.config.as_deref())?;
    let rule = a.rule.rule()?;
    let model = a.rule.model()?;
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let mut spec = calibration_spec(
        a.alpha,
        a.m,
        a.reps.unwrap_or(DEFAULT_CAL_REPS),
        seed,
        lpfa_mode(a.mode, a.ell_max, a.m.unwrap_or(1)),
    )?;
    if let Some(b) = &a.bracket {
        let &[lo, hi] = b.as_slice() else {
            return config_err("--bracket: expected LO,HI");
        };
        if !(lo < hi) {
            return config_err(format!("--bracket {lo},{hi}: LO must be below HI"));
        }
        spec.bracket = (lo, hi);
    }
    let cal = calibrate_threshold(&rule, &spec, &model)?;
    eprintln!(
        "threshold {} lpfa {} (se {})",
        cal.threshold, cal.lpfa.pd_hat, cal.lpfa.std_error
    );
    let out = CalibrateOutput {
        command: "calibrate",
        rule,
        model,
        m: spec.window_m,
        alpha: spec.target_alpha,
        mode: spec.mode,
        replications: spec.replications,
        seed,
        threshold: cal.threshold,
        lpfa: cal.lpfa.pd_hat,
        lpfa_se: cal.lpfa.std_error,
        iterations: cal.iterations,
        within_tolerance: cal.within_tolerance,
    };
    emit(a.out.as_deref(), &json_bytes(&out)?)
}

/// Parses `geom:RHO`, `geom0:RHO`, `fixed:N` or `infinite`.
fn parse_duration(s: &str) -> CliResult<DurationLaw> {
    let bad = || CliError::Config(format!("--duration {s:?}: expected geom:RHO, geom0:RHO, fixed:N or infinite"));
    let law = match s.split_once(':') {
        None if s == "infinite" => DurationLaw::Infinite,
        Some(("geom", v)) => DurationLaw::Geometric {
            rho: v.parse().map_err(|_| bad())?,
        },
        Some(("geom0", v)) => DurationLaw::GeometricFailures {
            rho: v.parse().map_err(|_| bad())?,
        },
        Some(("fixed", v)) => DurationLaw::Fixed {
            n: v.parse().map_err(|_| bad())?,
        },
        _ => return Err(bad()),
    };
    law.validate()
        .map_err(|e| CliError::Config(format!("--duration {s:?}: {e}")))?;
    Ok(law)
}

#[derive(Serialize)]
struct PdOutput {
    command: &'static str,
    rule: Rule,
    model: LlrModel,
    true_theta: f64,
    duration: DurationLaw,
    changepoint: u64,
    m: u64,
    alpha: f64,
    calibration_replications: u64,
    seed: u64,
    threshold: f64,
    lpfa: f64,
    pd: PdEstimate,
}

pub fn pd(a: &PdArgs) -> CliResult<()> {
    let a: PdArgs = resolve(a, a.config.as_deref())?;
    let rule = a.rule.rule()?;
    let model = a.rule.model()?;
    let duration = match (&a.duration, a.rule.rho) {
        (Some(s), _) => parse_duration(s)?,
        (None, Some(rho)) => parse_duration(&format!("geom:{rho}"))?,
        (None, None) => return config_err("missing --duration"),
    };
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let (cal_seed, pd_seed) = tables::run_seeds(seed);
    let calibration = calibration_spec(
        a.alpha,
        a.m,
        a.cal_reps.unwrap_or(DEFAULT_CAL_REPS),
        cal_seed,
        LpfaMode::Origin,
    )?;
    let true_theta = a.true_theta.or(a.rule.theta).unwrap_or_default();
    let spec = ExperimentSpec {
        model: model.clone(),
        true_theta: Some(true_theta),
        duration,
        rho_tuning: a.rule.rho.unwrap_or(0.0),
        fma_window: a.rule.window.unwrap_or(1),
        fma_start: match &rule {
            Rule::Fma { start, .. } => *start,
            _ => FmaStart::Cold,
        },
        calibration: calibration.clone(),
        replications: check_nonzero(a.reps.unwrap_or(DEFAULT_PD_REPS), "reps")?,
        seed: pd_seed,
        changepoint: a.changepoint.unwrap_or(0),
    };
    spec.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let cal = calibrate_threshold(&rule, &calibration, &model)?;
    let pd = estimate_pd(&rule, cal.threshold, &spec)?;
    eprintln!("threshold {} pd {} (se {})", cal.threshold, pd.pd_hat, pd.std_error);
    let out = PdOutput {
        command: "pd",
        rule,
        model,
        true_theta,
        duration,
        changepoint: spec.changepoint,
        m: calibration.window_m,
        alpha: calibration.target_alpha,
        calibration_replications: calibration.replications,
        seed,
        threshold: cal.threshold,
        lpfa: cal.lpfa.pd_hat,
        pd,
    };
    emit(a.out.as_deref(), &json_bytes(&out)?)
}

fn convention(c: Option<ConventionName>) -> Convention {
    match c {
        Some(ConventionName::Literal) => Convention::Literal,
        _ => Convention::Published,
    }
}

/// A result row tagged with the table it reproduces.
#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    source_table: &'a str,
    #[serde(flatten)]
    row: &'a T,
}

pub fn table(a: &TableArgs) -> CliResult<()> {
    let a: TableArgs = resolve(a, a.config.as_deref())?;
    let id = required(a.id.as_deref(), "id")?;
    let id: TableId = id
        .parse()
        .map_err(|_| CliError::Config(format!("--id {id:?}: expected one of I, II, III, IV, V")))?;
    let mut cfg = TableConfig::new(
        check_nonzero(a.reps.unwrap_or(DEFAULT_PD_REPS), "reps")?,
        a.cal_reps.unwrap_or(DEFAULT_CAL_REPS),
        a.seed.unwrap_or(DEFAULT_SEED),
    );
    cfg.convention = convention(a.convention);
    cfg.validate()
        .map_err(|e| CliError::Config(format!("--cal-reps: {e}")))?;
    let report = tables::reproduce_table(id, &cfg, &CalibrationCache::new())?;
    let passed = report.rows.iter().filter(|r| r.pass).count();
    eprintln!("{id:?}: {passed}/{} cells within tolerance", report.rows.len());
    let mut csv = Vec::new();
    report.write_csv(&mut csv, true)?;
    emit(a.out.as_deref(), &csv)?;
    if let Some(path) = &a.json {
        let name = format!("Table {id:?}");
        let rows: Vec<_> = report
            .rows
            .iter()
            .map(|row| Tagged {
                source_table: &name,
                row,
            })
            .collect();
        emit(Some(path), &json_bytes(&rows)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MismatchRow {
    rule: String,
    assumed_theta: f64,
    true_theta: f64,
    threshold: f64,
    pd_hat: f64,
    se: f64,
}

pub fn mismatch(a: &MismatchArgs) -> CliResult<()> {
    let a: MismatchArgs = resolve(a, a.config.as_deref())?;
    let assumed = required(a.assumed.clone(), "assumed")?;
    let true_thetas = required(a.true_thetas.clone(), "true")?;
    if assumed.is_empty() || true_thetas.is_empty() {
        return config_err("--assumed and --true need at least one value each");
    }
    for &t in assumed.iter().chain(&true_thetas) {
        if !t.is_finite() {
            return config_err(format!("post-change mean {t} is not finite"));
        }
    }
    if assumed.contains(&0.0) {
        return config_err("--assumed 0: the assumed mean must be nonzero");
    }
    let rho = check_open_unit(a.rho.unwrap_or(0.1), "rho")?;
    let conv = convention(a.convention);
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let (calibration_seed, pd_seed) = tables::run_seeds(seed);
    let alpha = check_open_unit(a.alpha.unwrap_or(TABLE_ALPHA), "alpha")?;
    let m = check_nonzero(a.m.unwrap_or(20), "m")?;
    let cal_reps = a.cal_reps.unwrap_or(DEFAULT_CAL_REPS);
    calibration_spec(Some(alpha), Some(m), cal_reps, calibration_seed, LpfaMode::Origin)?;
    let grid = MismatchGrid {
        assumed_thetas: assumed,
        true_thetas,
        sigma: check_positive(a.sigma.unwrap_or(1.0), "sigma")?,
        rho,
        fma_window: check_nonzero(a.window.unwrap_or((1.0 / rho).round() as usize) as u64, "L")? as usize,
        fma_start: match conv {
            Convention::Published => FmaStart::Warm,
            Convention::Literal => FmaStart::Cold,
        },
        duration: Some(match conv {
            Convention::Published => DurationLaw::GeometricFailures { rho },
            Convention::Literal => DurationLaw::Geometric { rho },
        }),
        window_m: m,
        alpha,
        calibration_replications: cal_reps,
        pd_replications: check_nonzero(a.reps.unwrap_or(DEFAULT_PD_REPS), "reps")?,
        calibration_seed,
        pd_seed,
    };
    let cells = run_mismatch_study(&grid, &CalibrationCache::new())?;
    let rows: Vec<MismatchRow> = cells
        .into_iter()
        .map(|c| MismatchRow {
            rule: c.rule,
            assumed_theta: c.assumed_theta,
            true_theta: c.true_theta,
            threshold: c.threshold,
            pd_hat: c.pd.pd_hat,
            se: c.pd.std_error,
        })
        .collect();
    let mut csv = String::from("rule,assumed_theta,true_theta,threshold,pd_hat,se\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.rule, r.assumed_theta, r.true_theta, r.threshold, r.pd_hat, r.se
        ));
    }
    emit(a.out.as_deref(), csv.as_bytes())?;
    if let Some(path) = &a.json {
        let tagged: Vec<_> = rows
            .iter()
            .map(|row| Tagged {
                source_table: "Table III",
                row,
            })
            .collect();
        emit(Some(path), &json_bytes(&tagged)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ArlCheck {
    rule: Rule,
    model: LlrModel,
    mode: LpfaMode,
    threshold: f64,
    lpfa: f64,
    arl: ArlEstimate,
    /// `arl.mean >= gamma`.
    satisfied: bool,
}

#[derive(Serialize)]
struct ArlOutput {
    command: &'static str,
    m: u64,
    alpha: f64,
    gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    check: Option<ArlCheck>,
}

pub fn arl_bound(a: &ArlArgs) -> CliResult<()> {
    let a: ArlArgs = resolve(a, a.config.as_deref())?;
    let alpha = check_open_unit(required(a.alpha, "alpha")?, "alpha")?;
    let m = check_nonzero(required(a.m, "m")?, "m")?;
    let gamma = gamma_bound(m, alpha)?;
    let check = match a.rule.rule {
        None => None,
        Some(_) => {
            let rule = a.rule.rule()?;
            let model = a.rule.model()?;
            let seed = a.seed.unwrap_or(DEFAULT_SEED);
            let (cal_seed, arl_seed) = tables::run_seeds(seed);
            let spec = calibration_spec(
                Some(alpha),
                Some(m),
                a.cal_reps.unwrap_or(DEFAULT_CAL_REPS),
                cal_seed,
                lpfa_mode(Some(a.mode.unwrap_or(ModeName::Sup)), a.ell_max, m),
            )?;
            let reps = check_nonzero(a.reps.unwrap_or(20_000), "reps")?;
            let cap = check_nonzero(a.cap.unwrap_or(1_000_000), "cap")?;
            let cal = calibrate_threshold(&rule, &spec, &model)?;
            let arl = estimate_arl(&rule, cal.threshold, &model, reps, cap, arl_seed)?;
            Some(ArlCheck {
                rule,
                model,
                mode: spec.mode,
                threshold: cal.threshold,
                lpfa: cal.lpfa.pd_hat,
                satisfied: arl.mean >= gamma,
                arl,
            })
        }
    };
    eprintln!("gamma {gamma}");
    let out = ArlOutput {
        command: "arl-bound",
        m,
        alpha,
        gamma,
        check,
    };
    emit(a.out.as_deref(), &json_bytes(&out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_syntax() {
        assert_eq!(parse_duration("geom:0.1").unwrap(), DurationLaw::Geometric { rho: 0.1 });
        assert_eq!(
            parse_duration("geom0:0.2").unwrap(),
            DurationLaw::GeometricFailures { rho: 0.2 }
        );
        assert_eq!(parse_duration("fixed:5").unwrap(), DurationLaw::Fixed { n: 5 });
        assert_eq!(parse_duration("infinite").unwrap(), DurationLaw::Infinite);
        for bad in ["geom", "geom:x", "fixed:0", "geom:1.5", "poisson:2"] {
            assert!(matches!(parse_duration(bad), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn rule_flags_are_checked() {
        let mut r = RuleArgs {
            rule: Some(RuleName::ModCusum),
            theta: Some(1.0),
            ..Default::default()
        };
        assert!(r.rule().is_err());
        r.rho = Some(0.1);
        assert_eq!(r.rule().unwrap(), Rule::ModCusum { rho: 0.1 });
        r.rule = Some(RuleName::Fma);
        assert!(r.rule().is_err());
        r.window = Some(10);
        r.start = Some(StartName::Warm);
        assert!(matches!(r.rule().unwrap(), Rule::Fma { window: 10, start: FmaStart::Warm, .. }));
        r.sigma = Some(-1.0);
        assert!(r.model().is_err());
    }
}
