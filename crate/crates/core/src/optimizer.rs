//! Alternating optimization of covariances, transmit positions and user
//! positions under a penalty on the SINR constraints.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::beamforming::{min_slack, solve_beamforming, BeamformingInput, BeamformingResult, Extracted};
use crate::detection::{detection_probability, Convention, DetectorConfig};
use crate::physics::{
    all_channels, min_pairwise, omega_matrix, sinr_beamformers, tx_powers, AntennaLayout, Region, SensingWeights,
};
use crate::rxpos::{update_all, GaConfig, RxRule};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::txpos::{sweep_all, PositionContext, SweepConfig};
use crate::{Error, Point, MIN_SEPARATION};

/// Antenna schemes compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Both transmit and user antennas move.
    DsFas,
    /// Only transmit antennas move.
    TFas,
    /// Only user antennas move.
    RFas,
    /// Fixed uniform linear arrays.
    FpaUla,
    /// Fixed arrays at the packing layout.
    FpaCp,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::DsFas, Scheme::TFas, Scheme::RFas, Scheme::FpaUla, Scheme::FpaCp];

    pub fn moves_tx(self) -> bool {
        matches!(self, Scheme::DsFas | Scheme::TFas)
    }

    pub fn moves_rx(self) -> bool {
        matches!(self, Scheme::DsFas | Scheme::RFas)
    }

    pub fn is_fixed(self) -> bool {
        !self.moves_tx() && !self.moves_rx()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::DsFas => "ds-fas",
            Scheme::TFas => "t-fas",
            Scheme::RFas => "r-fas",
            Scheme::FpaUla => "fpa-ula",
            Scheme::FpaCp => "fpa-cp",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown scheme {s:?}; expected one of ds-fas, t-fas, r-fas, fpa-ula, fpa-cp"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoSettings {
    /// Stop when `rho` rises by less than this fraction.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Penalty weight relative to the sensing objective of a uniform split.
    pub eta_factor: f64,
    pub sweep: SweepConfig,
    pub ga: GaConfig,
    /// Weight the sensing objective with the realized reflection
    /// coefficients instead of their second moments.
    pub genie_psi: bool,
    pub rx_rule: RxRule,
    pub convention: Convention,
}

impl Default for AoSettings {
    fn default() -> Self {
        AoSettings {
            epsilon: 1e-2,
            max_iter: 100,
            eta_factor: 100.0,
            sweep: SweepConfig::default(),
            ga: GaConfig::default(),
            genie_psi: false,
            rx_rule: RxRule::SinrMax,
            convention: Convention::Half,
        }
    }
}

#[derive(Deserialize)]
struct Wrapper {
    #[serde(default)]
    optimizer: Option<AoSettings>,
}

impl AoSettings {
    /// Reads the `[optimizer]` table of a configuration file; other tables
    /// and keys are left to the scenario parser.
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let Some(opt) = table.get("optimizer") else {
            return Ok(AoSettings::default());
        };
        let mut wrap = toml::Table::new();
        wrap.insert("optimizer".into(), opt.clone());
        let w: Wrapper = wrap.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(format!("[optimizer] {e}")))?;
        let s = w.optimizer.unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.epsilon >= 0.0) || self.max_iter == 0 || !(self.eta_factor > 0.0) {
            return Err(Error::InvalidConfig("optimizer needs epsilon >= 0, max_iter >= 1, eta_factor > 0".into()));
        }
        self.ga.validate()
    }
}

/// `N` points at half-wavelength spacing along the x axis, centered.
pub fn ula_positions(n: usize, region: &Region) -> Result<Vec<Point>, Error> {
    let pts: Vec<Point> = (0..n).map(|i| [(i as f64 - 0.5 * (n as f64 - 1.0)) * MIN_SEPARATION, 0.0]).collect();
    if pts.iter().any(|p| region.margin(*p) < -1e-12) {
        return Err(packing_error(n, region));
    }
    Ok(pts)
}

fn packing_error(n: usize, region: &Region) -> Error {
    Error::PackingInfeasible { n, width: region.width, height: region.height, min_sep: MIN_SEPARATION }
}

fn nearest(p: Point, others: &[Point]) -> f64 {
    others.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min)
}

/// Greedy max-min placement on a grid starting from a corner, refined by
/// coordinate moves that push each point away from its nearest neighbour.
pub fn cp_positions(n: usize, region: &Region) -> Result<Vec<Point>, Error> {
    if n <= 1 {
        return Ok(vec![[0.0, 0.0]; n]);
    }
    const GRID: usize = 41;
    let (lo, hi) = (region.lo(), region.hi());
    let axis = |i: usize, d: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (GRID - 1) as f64;
    let grid: Vec<Point> = (0..GRID).flat_map(|j| (0..GRID).map(move |i| (i, j))).map(|(i, j)| [axis(i, 0), axis(j, 1)]).collect();
    let mut pts = vec![lo];
    while pts.len() < n {
        let mut best = (f64::NEG_INFINITY, lo);
        for &g in &grid {
            let d = nearest(g, &pts);
            if d > best.0 {
                best = (d, g);
            }
        }
        pts.push(best.1);
    }
    let mut step = 0.25 * region.width.max(region.height);
    for _ in 0..12 {
        for i in 0..n {
            let others: Vec<Point> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| *p).collect();
            let mut cur = nearest(pts[i], &others);
            for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
                let cand = region.clip([pts[i][0] + step * dir[0], pts[i][1] + step * dir[1]]);
                let d = nearest(cand, &others);
                if d > cur + 1e-12 {
                    pts[i] = cand;
                    cur = d;
                }
            }
        }
        step *= 0.5;
    }
    if min_pairwise(&pts) < MIN_SEPARATION - 1e-12 {
        return Err(packing_error(n, region));
    }
    Ok(pts)
}

/// Starting layout of a scheme. User antennas start at their region center.
pub fn init_layout(scheme: Scheme, cfg: &ScenarioConfig) -> Result<AntennaLayout, Error> {
    let region_tx = Region::new(cfg.region_tx);
    let region_rx = Region::new(cfg.region_rx);
    let base = match scheme {
        Scheme::FpaUla => ula_positions(cfg.n, &region_tx)?,
        _ => cp_positions(cfg.n, &region_tx)?,
    };
    Ok(AntennaLayout { tx: vec![base; cfg.m_t], ue: vec![[0.0, 0.0]; cfg.k], region_tx, region_rx })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub omega: f64,
    pub nu: f64,
    pub rho: f64,
    pub sinr: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub scheme: Scheme,
    pub trace: Vec<TraceRow>,
    pub layout: AntennaLayout,
    pub covariances: Extracted,
    pub feasible: bool,
    pub sinr: Vec<f64>,
    pub omega: f64,
    pub nu: f64,
    pub rho: f64,
    pub eta: f64,
    pub p_d: f64,
    pub iterations: usize,
    pub wall_time: Duration,
}

const NU_TOL: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 30;

pub fn sensing_weights(scenario: &Scenario, cfg: &ScenarioConfig, settings: &AoSettings) -> SensingWeights {
    if settings.genie_psi {
        SensingWeights::genie(&scenario.channels, cfg.t_snapshots)
    } else {
        SensingWeights::expected(&scenario.channels, cfg.t_snapshots)
    }
}

/// Runs the alternating optimization from the scheme's initial layout.
pub fn run(scenario: &Scenario, cfg: &ScenarioConfig, scheme: Scheme, settings: &AoSettings) -> Result<RunResult, Error> {
    let layout = init_layout(scheme, cfg)?;
    run_from(scenario, cfg, scheme, settings, layout)
}

/// Runs the alternating optimization from a given layout.
pub fn run_from(
    scenario: &Scenario,
    cfg: &ScenarioConfig,
    scheme: Scheme,
    settings: &AoSettings,
    mut layout: AntennaLayout,
) -> Result<RunResult, Error> {
    settings.validate()?;
    let start = Instant::now();
    let ch = &scenario.channels;
    let weights = sensing_weights(scenario, cfg, settings);
    let gamma = vec![cfg.gamma; cfg.k];
    let mut eta = f64::NAN;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut last: Option<BeamformingResult> = None;

    for iter in 1..=settings.max_iter {
        let h = all_channels(&layout, ch);
        let q = omega_matrix(&layout, ch, &weights);
        let input = BeamformingInput { channels: &h, q: &q, gamma: &gamma, noise: &ch.noise_ue, p_t: cfg.p_t, n: cfg.n, m_t: cfg.m_t };
        if iter == 1 {
            let reference = input.uniform_omega();
            eta = settings.eta_factor * if reference > 0.0 { reference } else { 1.0 };
        }
        let mut bf = solve_beamforming(&input, eta)?;
        if iter == 1 && bf.nu > NU_TOL && min_slack(&input)? <= NU_TOL {
            for _ in 0..MAX_DOUBLINGS {
                eta *= 2.0;
                bf = solve_beamforming(&input, eta)?;
                debug!("penalty raised to {eta:.3e}, slack {:.3e}", bf.nu);
                if bf.nu <= NU_TOL {
                    break;
                }
            }
        }
        let mut nu = bf.nu;
        {
            let ctx = PositionContext::new(ch, &weights, &bf.extracted.r_k, &bf.extracted.r, &gamma, eta);
            if scheme.moves_tx() {
                sweep_all(&ctx, &mut layout, &settings.sweep);
                nu = ctx.nu(&layout);
            }
            if scheme.moves_rx() {
                update_all(&mut layout, ch, &bf.extracted.r_k, &bf.extracted.r, &gamma, nu, &settings.ga, settings.rx_rule);
                nu = ctx.nu(&layout);
            }
        }
        let omega = crate::physics::omega(&omega_matrix(&layout, ch, &weights), &bf.extracted.r);
        let rho = omega - eta * nu;
        let sinr = final_sinr(&layout, scenario, &bf.extracted);
        debug!("iteration {iter}: omega {omega:.6e} nu {nu:.3e} rho {rho:.6e}");
        let prev = trace.last().map(|r| r.rho);
        trace.push(TraceRow { iter, omega, nu, rho, sinr });
        last = Some(bf);
        if scheme.is_fixed() {
            break;
        }
        if let Some(p) = prev {
            if rho - p < settings.epsilon * p.abs() {
                break;
            }
        }
    }

    let bf = last.expect("at least one iteration");
    let row = trace.last().expect("at least one iteration").clone();
    let feasible = row.sinr.iter().zip(&gamma).all(|(s, g)| *s >= g * (1.0 - 1e-6));
    let det = DetectorConfig { q: cfg.m_t * cfg.m_r, p_fa: cfg.p_fa, convention: settings.convention };
    let p_d = detection_probability(row.omega, &det)?;
    info!("{scheme}: {} iterations, omega {:.4e}, feasible {feasible}", trace.len(), row.omega);
    Ok(RunResult {
        scheme,
        iterations: trace.len(),
        layout,
        covariances: bf.extracted,
        feasible,
        sinr: row.sinr.clone(),
        omega: row.omega,
        nu: row.nu,
        rho: row.rho,
        eta,
        p_d,
        trace,
        wall_time: start.elapsed(),
    })
}

fn final_sinr(layout: &AntennaLayout, scenario: &Scenario, cov: &Extracted) -> Vec<f64> {
    let h = all_channels(layout, &scenario.channels);
    h.iter()
        .enumerate()
        .map(|(k, hk)| sinr_beamformers(hk, k, &cov.w, &cov.r0, scenario.channels.noise_ue[k]))
        .collect()
}

/// Worst slack of every constraint family; negative means violated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintReport {
    /// `min_k SINR_k / gamma_k - 1`.
    pub sinr: f64,
    /// `min_t 1 - P_t^{used} / P_t`.
    pub power: f64,
    /// Distance of the closest transmit element to its region boundary.
    pub tx_region: f64,
    pub rx_region: f64,
    /// `min spacing - lambda / 2`.
    pub separation: f64,
    /// Penalty slack; never negative.
    pub nu: f64,
    /// Smallest eigenvalue of the sensing covariance relative to `tr R`.
    pub sensing_psd: f64,
}

impl ConstraintReport {
    /// Names of families whose slack is below `-tol`.
    pub fn violations(&self, tol: f64) -> Vec<&'static str> {
        [
            ("C1", self.sinr),
            ("C2", self.power),
            ("C3", self.tx_region),
            ("C4", self.rx_region),
            ("C5", self.separation),
            ("C6", self.nu),
            ("PSD", self.sensing_psd),
        ]
        .into_iter()
        .filter(|(_, s)| *s < -tol)
        .map(|(n, _)| n)
        .collect()
    }
}

/// Recomputes every constraint on a final solution.
pub fn verify_constraints(result: &RunResult, scenario: &Scenario, cfg: &ScenarioConfig) -> ConstraintReport {
    let layout = &result.layout;
    let sinr = final_sinr(layout, scenario, &result.covariances)
        .iter()
        .map(|s| if cfg.gamma > 0.0 { s / cfg.gamma - 1.0 } else { f64::INFINITY })
        .fold(f64::INFINITY, f64::min);
    let power = tx_powers(&result.covariances.r, cfg.n).iter().map(|p| 1.0 - p / cfg.p_t).fold(f64::INFINITY, f64::min);
    let tx_region = layout.tx.iter().flatten().map(|p| layout.region_tx.margin(*p)).fold(f64::INFINITY, f64::min);
    let rx_region = layout.ue.iter().map(|p| layout.region_rx.margin(*p)).fold(f64::INFINITY, f64::min);
    let separation = layout.min_separation() - MIN_SEPARATION;
    let tr = result.covariances.r.trace().re.max(f64::MIN_POSITIVE);
    let sensing_psd = result.covariances.r0.clone().symmetric_eigenvalues().min() / tr;
    ConstraintReport { sinr, power, tx_region, rx_region, separation, nu: result.nu, sensing_psd }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("fas".parse::<Scheme>().is_err());
    }

    #[test]
    fn scheme_flags() {
        assert!(Scheme::DsFas.moves_tx() && Scheme::DsFas.moves_rx());
        assert!(Scheme::TFas.moves_tx() && !Scheme::TFas.moves_rx());
        assert!(!Scheme::RFas.moves_tx() && Scheme::RFas.moves_rx());
        assert!(Scheme::FpaCp.is_fixed() && Scheme::FpaUla.is_fixed());
    }

    #[test]
    fn settings_from_table() {
        let s = AoSettings::from_toml("k = 2\n[optimizer]\nepsilon = 0.05\n[optimizer.ga]\nb = 4.0\n").unwrap();
        assert_eq!(s.epsilon, 0.05);
        assert_eq!(s.ga.b, 4.0);
        assert_eq!(AoSettings::from_toml("k = 2").unwrap(), AoSettings::default());
        assert!(AoSettings::from_toml("[optimizer]\nbogus = 1\n").is_err());
    }

    #[test]
    fn packing_too_dense() {
        assert!(matches!(cp_positions(9, &Region::new([0.5, 0.5])), Err(Error::PackingInfeasible { .. })));
        assert!(ula_positions(6, &Region::new([2.0, 2.0])).is_err());
    }
}
