//! Experiment commands behind the `fisac` binary.
//!
//! Every command is a pure function of its inputs and seed so that repeated
//! invocations produce identical CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fluid_isac::detection::{calibrate_convention, draw_snapshots, observation_matrix, CalibrationReport, Convention};
use fluid_isac::optimizer::{init_layout, run, AoSettings, RunResult, Scheme};
use fluid_isac::physics::phase;
use fluid_isac::scenario::{db_to_linear, trial_rng, Scenario, ScenarioConfig};
use fluid_isac::{CMat, CVec, C64};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] fluid_isac::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

/// Which detector convention to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConventionChoice {
    Auto,
    Fixed(Convention),
}

impl FromStr for ConventionChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(ConventionChoice::Auto),
            other => other.parse().map(ConventionChoice::Fixed),
        }
    }
}

/// Flags shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub genie_psi: bool,
    pub convention: Option<ConventionChoice>,
}

pub const CALIBRATION_DRAWS: usize = 100_000;

/// Loads the scenario and optimizer settings and applies flag overrides.
pub fn load(common: &Common) -> Result<(ScenarioConfig, AoSettings), CliError> {
    let (mut cfg, mut settings) = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.clone(), source })?;
            let cfg = ScenarioConfig::from_toml(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let settings = AoSettings::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            (cfg, settings)
        }
        None => (ScenarioConfig::default(), AoSettings::default()),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.genie_psi {
        settings.genie_psi = true;
    }
    match common.convention {
        Some(ConventionChoice::Fixed(c)) => settings.convention = c,
        Some(ConventionChoice::Auto) => settings.convention = calibrate(&cfg, CALIBRATION_DRAWS)?.selected,
        None => {}
    }
    cfg.validate()?;
    Ok((cfg, settings))
}

fn fmt_row(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Per-iteration trace: `iter,omega,nu,rho,sinr_1..sinr_K`.
pub fn trace_csv(result: &RunResult, k: usize) -> String {
    let mut header = vec!["iter".to_string(), "omega".into(), "nu".into(), "rho".into()];
    header.extend((1..=k).map(|i| format!("sinr_{i}")));
    let mut out = fmt_row(&header);
    for row in &result.trace {
        let mut f = vec![row.iter.to_string(), row.omega.to_string(), row.nu.to_string(), row.rho.to_string()];
        f.extend(row.sinr.iter().map(f64::to_string));
        out.push_str(&fmt_row(&f));
    }
    out
}

pub const SUMMARY_HEADER: [&str; 11] =
    ["scheme", "seed", "trial", "iterations", "feasible", "omega", "nu", "rho", "eta", "p_d", "min_sinr"];

pub fn summary_row(result: &RunResult, seed: u64, trial: u64) -> Vec<String> {
    let min_sinr = result.sinr.iter().copied().fold(f64::INFINITY, f64::min);
    vec![
        result.scheme.to_string(),
        seed.to_string(),
        trial.to_string(),
        result.iterations.to_string(),
        result.feasible.to_string(),
        result.omega.to_string(),
        result.nu.to_string(),
        result.rho.to_string(),
        result.eta.to_string(),
        result.p_d.to_string(),
        min_sinr.to_string(),
    ]
}

pub struct RunOutput {
    pub result: RunResult,
    pub trace: String,
    pub summary: String,
}

/// One optimization run on trial 0 of the configured seed.
pub fn cmd_run(cfg: &ScenarioConfig, settings: &AoSettings, scheme: Scheme) -> Result<RunOutput, CliError> {
    let scenario = Scenario::generate(cfg, 0)?;
    let result = run(&scenario, cfg, scheme, settings)?;
    let trace = trace_csv(&result, cfg.k);
    let mut summary = fmt_row(&SUMMARY_HEADER.map(String::from));
    summary.push_str(&fmt_row(&summary_row(&result, cfg.seed, 0)));
    Ok(RunOutput { result, trace, summary })
}

/// Swept configuration parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    Gamma,
    GammaDb,
    K,
    RegionTx,
    RegionRx,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Gamma => "gamma",
            SweepVar::GammaDb => "gamma_db",
            SweepVar::K => "k",
            SweepVar::RegionTx => "region_tx",
            SweepVar::RegionRx => "region_rx",
        }
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, v: f64) -> Result<(), CliError> {
        match self {
            SweepVar::Gamma => cfg.gamma = v,
            SweepVar::GammaDb => cfg.gamma = db_to_linear(v),
            SweepVar::K => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(CliError::Usage(format!("user count must be a nonnegative integer, got {v}")));
                }
                cfg.k = v as usize;
            }
            SweepVar::RegionTx => cfg.region_tx = [v, v],
            SweepVar::RegionRx => cfg.region_rx = [v, v],
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

impl FromStr for SweepSpec {
    type Err = String;
    /// `name=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, list) = s.split_once('=').ok_or_else(|| format!("sweep {s:?} is not of the form name=v1,v2"))?;
        let var = [SweepVar::Gamma, SweepVar::GammaDb, SweepVar::K, SweepVar::RegionTx, SweepVar::RegionRx]
            .into_iter()
            .find(|v| v.name() == name.trim())
            .ok_or_else(|| format!("unknown sweep variable {name:?}; expected gamma, gamma_db, k, region_tx or region_rx"))?;
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad sweep value {v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("sweep grid is empty".into());
        }
        Ok(SweepSpec { var, values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_var: &'static str,
    pub value: f64,
    pub scheme: Scheme,
    pub trials: usize,
    pub mean_omega: f64,
    pub se_omega: f64,
    pub mean_pd: f64,
    pub se_pd: f64,
    pub feasible_rate: f64,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Monte Carlo sweep. Every scheme sees the same channel draws; trials whose
/// verdict is infeasible count as `omega = 0`, whose detection probability
/// is the false-alarm rate.
pub fn cmd_sweep(
    cfg: &ScenarioConfig,
    settings: &AoSettings,
    schemes: &[Scheme],
    spec: &SweepSpec,
    trials: usize,
) -> Result<Vec<SweepRow>, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("at least one trial is required".into()));
    }
    let mut cfgs = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        let mut c = cfg.clone();
        spec.var.apply(&mut c, v)?;
        c.validate()?;
        cfgs.push(c);
    }
    let jobs: Vec<(usize, usize, usize)> = (0..cfgs.len())
        .flat_map(|v| (0..schemes.len()).flat_map(move |s| (0..trials).map(move |t| (v, s, t))))
        .collect();
    let results: Vec<(bool, f64, f64)> = jobs
        .par_iter()
        .map(|&(v, s, t)| {
            let c = &cfgs[v];
            let scenario = Scenario::generate(c, t as u64)?;
            let r = run(&scenario, c, schemes[s], settings)?;
            let p0 = fluid_isac::detection::detection_probability(0.0, &detector(c, settings))?;
            Ok(if r.feasible { (true, r.omega, r.p_d) } else { (false, 0.0, p0) })
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows = Vec::new();
    for (chunk, job) in results.chunks(trials).zip(jobs.chunks(trials)) {
        let (v, s, _) = job[0];
        let omegas: Vec<f64> = chunk.iter().map(|r| r.1).collect();
        let pds: Vec<f64> = chunk.iter().map(|r| r.2).collect();
        let (mean_omega, se_omega) = mean_se(&omegas);
        let (mean_pd, se_pd) = mean_se(&pds);
        rows.push(SweepRow {
            sweep_var: spec.var.name(),
            value: spec.values[v],
            scheme: schemes[s],
            trials,
            mean_omega,
            se_omega,
            mean_pd,
            se_pd,
            feasible_rate: chunk.iter().filter(|r| r.0).count() as f64 / trials as f64,
        });
    }
    Ok(rows)
}

fn detector(cfg: &ScenarioConfig, settings: &AoSettings) -> fluid_isac::detection::DetectorConfig {
    fluid_isac::detection::DetectorConfig { q: cfg.m_t * cfg.m_r, p_fa: cfg.p_fa, convention: settings.convention }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?).expect("utf8"))
}

/// Stream used for detector calibration draws, disjoint from trial streams.
const CALIBRATION_STREAM: u64 = 1 << 40;

/// Observation matrix of trial 0 at the packing layout with a uniform power
/// split, and unit-modulus receive steering with random phases.
pub fn calibration_matrix(cfg: &ScenarioConfig) -> Result<(CMat, f64), CliError> {
    let scenario = Scenario::generate(cfg, 0)?;
    let layout = init_layout(Scheme::FpaCp, cfg)?;
    let mut rng = trial_rng(cfg.seed, CALIBRATION_STREAM);
    let dim = cfg.n * cfg.m_t;
    let r = CMat::identity(dim, dim) * C64::new(cfg.p_t / cfg.n as f64, 0.0);
    let snapshots = draw_snapshots(&r, cfg.t_snapshots, &mut rng);
    let steering: Vec<CVec> = (0..cfg.m_r)
        .map(|_| CVec::from_iterator(cfg.n, (0..cfg.n).map(|_| phase(2.0 * std::f64::consts::PI * rng.random::<f64>()))))
        .collect();
    let g = observation_matrix(&layout, &scenario.channels, &snapshots, &steering);
    Ok((g, scenario.channels.noise_rx[0]))
}

pub fn calibrate(cfg: &ScenarioConfig, draws: usize) -> Result<CalibrationReport, CliError> {
    let (g, noise) = calibration_matrix(cfg)?;
    let mut rng = trial_rng(cfg.seed, CALIBRATION_STREAM + 1);
    Ok(calibrate_convention(&g, noise, cfg.p_fa, draws, &mut rng)?)
}

/// `key,value` report of a calibration.
pub fn calibration_csv(rep: &CalibrationReport) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in [
        ("draws", rep.draws.to_string()),
        ("p_fa", rep.p_fa.to_string()),
        ("threshold", rep.threshold.to_string()),
        ("rate_paper", rep.rate_paper.to_string()),
        ("rate_half", rep.rate_half.to_string()),
        ("band_lo", rep.band.0.to_string()),
        ("band_hi", rep.band.1.to_string()),
        ("selected", rep.selected.to_string()),
    ] {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// Parses `all` or a comma-separated scheme list.
pub fn parse_schemes(s: &str) -> Result<Vec<Scheme>, CliError> {
    if s == "all" {
        return Ok(Scheme::ALL.to_vec());
    }
    s.split(',').map(|x| x.trim().parse::<Scheme>().map_err(CliError::Usage)).collect()
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
