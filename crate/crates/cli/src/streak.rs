use serde::Serialize;
use tdet::rng::{derive_seed, RngStream};
use tdet::streak::{
    bench_sd_vs_snr, calibrate_scan_threshold, detect, read_frame, refine_ml, synth_frame,
    write_bench_csv, write_frame, write_pgm, BenchConfig, LocalizationArea, SearchConfig,
    StreakEstimate, StreakParams, DEFAULT_PSF_WIDTH,
};
use tdet::streak::bench::MIN_TRIALS;
use tdet::streak::scan::DEFAULT_STEP_ALPHA;
use tdet::Error;

use crate::args::{BenchArgs, DetectArgs, SynthArgs};
use crate::config::*;
use crate::run::{emit, json_bytes};

const DEFAULT_STRIP: usize = 16;

fn check_dims(w: Option<usize>, h: Option<usize>) -> CliResult<(usize, usize)> {
    let w = check_nonzero(required(w, "w")? as u64, "w")? as usize;
    let h = check_nonzero(required(h, "h")? as u64, "h")? as usize;
    Ok((w, h))
}

fn placement(width: usize, height: usize, strip: usize, len: f64, psf: f64, sigma: f64, seed: u64) -> BenchConfig {
    let mut b = BenchConfig::new(Vec::new(), 0, seed);
    b.width = width;
    b.height = height;
    b.strip_width = strip;
    b.streak_len = len;
    b.psf_width = psf;
    b.sigma = sigma;
    b
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let a: SynthArgs = resolve(a, a.config.as_deref())?;
    let (w, h) = check_dims(a.w, a.h)?;
    let snr = required(a.snr, "snr")?;
    if !(snr >= 0.0 && snr.is_finite()) {
        return config_err(format!("--snr {snr}: must be nonnegative"));
    }
    let sigma = check_positive(a.sigma.unwrap_or(1.0), "sigma")?;
    let psf = check_positive(a.psf.unwrap_or(DEFAULT_PSF_WIDTH), "psf")?;
    let len = check_positive(a.len.unwrap_or(70.0), "len")?;
    let seed = a.seed.unwrap_or(1);
    let place = placement(w, h, a.strip.unwrap_or(DEFAULT_STRIP), len, psf, sigma, seed);
    place.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = RngStream::new(seed, 0);
    let streak = if snr > 0.0 {
        Some(place.random_streak(snr, &mut rng)?)
    } else {
        None
    };
    let mut frame = synth_frame(w, h, streak.as_ref(), sigma, &mut rng)?;
    frame.seed = Some(seed);
    let out = a.out.unwrap_or_else(|| "frame.f32".into());
    write_frame(&frame, &out)?;
    if let Some(pgm) = &a.pgm {
        write_pgm(&frame, pgm)?;
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct Endpoints {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl From<&StreakParams> for Endpoints {
    fn from(s: &StreakParams) -> Self {
        let [x0, y0, x1, y1] = s.endpoints();
        Self { x0, y0, x1, y1 }
    }
}

#[derive(Serialize)]
struct DetectOutput {
    detection: bool,
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    localization_area: Option<LocalizationArea>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coarse: Option<Endpoints>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<StreakEstimate>,
    /// Why a localized candidate was dropped.
    #[serde(skip_serializing_if = "Option::is_none")]
    rejected: Option<String>,
    /// The streak recorded in the frame sidecar, if any.
    truth: Option<StreakParams>,
    /// Distances of the estimated start and end from the recorded streak, px.
    #[serde(skip_serializing_if = "Option::is_none")]
    endpoint_errors: Option<[f64; 2]>,
}

pub fn detect_cmd(a: &DetectArgs) -> CliResult<()> {
    let a: DetectArgs = resolve(a, a.config.as_deref())?;
    let input = required(a.input.clone(), "input")?;
    let alpha = check_open_unit(a.alpha.unwrap_or(DEFAULT_STEP_ALPHA), "alpha")?;
    let psf = check_positive(a.psf.unwrap_or(DEFAULT_PSF_WIDTH), "psf")?;
    let strip = check_nonzero(a.strip.unwrap_or(DEFAULT_STRIP) as u64, "strip")? as usize;
    if let Some(t) = a.threshold {
        check_positive(t, "threshold")?;
    }
    let frame = read_frame(&input).map_err(|e| match e {
        Error::Io(io) => CliError::Frame(format!("{}: {io}", input.display())),
        other => CliError::Frame(other.to_string()),
    })?;
    let area = SearchConfig::central_strip(frame.width, frame.height, strip)
        .map_err(|e| CliError::Config(format!("--strip {strip}: {e}")))?;
    let mut cfg = SearchConfig::new(area, 0.0);
    cfg.psf_width = psf;
    cfg.threshold = match a.threshold {
        Some(t) => t,
        None => calibrate_scan_threshold(
            frame.sigma,
            cfg.window_len,
            alpha,
            (200.0 / alpha).ceil() as u64,
            derive_seed(a.seed.unwrap_or(1), "scan-threshold"),
        )?,
    };
    cfg.validate()?;
    let mut out = DetectOutput {
        detection: false,
        threshold: cfg.threshold,
        localization_area: None,
        coarse: None,
        estimate: None,
        rejected: None,
        truth: frame.streak,
        endpoint_errors: None,
    };
    if let Some(area) = detect(&frame, &cfg)? {
        let coarse = area.coarse_streak(1.0, psf);
        out.localization_area = Some(area);
        out.coarse = Some(Endpoints::from(&coarse));
        match refine_ml(&frame, &area, &coarse, psf) {
            Ok(est) => {
                out.detection = true;
                if let Some(t) = &frame.streak {
                    let e = est.streak(psf).canonical();
                    let t = t.canonical();
                    out.endpoint_errors = Some([
                        (e.x0 - t.x0).hypot(e.y0 - t.y0),
                        (e.x1 - t.x1).hypot(e.y1 - t.y1),
                    ]);
                }
                out.estimate = Some(est);
            }
            Err(Error::Rejected(why)) => out.rejected = Some(why),
            Err(e) => return Err(e.into()),
        }
    }
    eprintln!("detection: {}", out.detection);
    emit(a.out.as_deref(), &json_bytes(&out)?)
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let a: BenchArgs = resolve(a, a.config.as_deref())?;
    let snrs = a.snr.clone().unwrap_or_else(|| vec![0.9, 1.0, 2.0, 5.0, 10.0]);
    if snrs.is_empty() {
        return config_err("--snr needs at least one value");
    }
    let trials = a.trials.unwrap_or(MIN_TRIALS);
    if trials < MIN_TRIALS {
        return config_err(format!("--trials {trials}: must be at least {MIN_TRIALS}"));
    }
    let mut b = BenchConfig::new(snrs, trials, a.seed.unwrap_or(1));
    if let Some(w) = a.w {
        b.width = w;
    }
    if let Some(h) = a.h {
        b.height = h;
    }
    if let Some(s) = a.strip {
        b.strip_width = s;
    }
    if let Some(l) = a.len {
        b.streak_len = check_positive(l, "len")?;
    }
    b.step_alpha = check_open_unit(a.alpha.unwrap_or(DEFAULT_STEP_ALPHA), "alpha")?;
    b.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let points = bench_sd_vs_snr(&b)?;
    let mut csv = Vec::new();
    write_bench_csv(&points, &mut csv)?;
    emit(a.out.as_deref(), &csv)
}
