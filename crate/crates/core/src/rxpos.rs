//! Receive position updates: per-user gradient ascent on the SINR.
//!
//! The stacked channel of user `k` is `h = M b(v)`, where `b(v)` collects the
//! receive phase factors of every path from every transmitter and `M` is
//! fixed by the transmit layout. Hence `h^H X h = b^H (M^H X M) b`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::physics::{dot, phase, quad, stacked_channel, AntennaLayout, Region};
use crate::scenario::ChannelSet;
use crate::{CMat, CVec, Error, Point, WAVENUMBER};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    /// Numerator of the step size; `None` uses `1 / (1 + |grad SINR(v0)|)`.
    pub a: Option<f64>,
    pub b: f64,
    pub max_iter: usize,
    pub track_best: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig { a: None, b: 10.0, max_iter: 30, track_best: true }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.a.is_some_and(|a| !(a > 0.0)) || !(self.b >= 0.0) {
            return Err(Error::InvalidConfig("step constants need a > 0 and b >= 0".into()));
        }
        Ok(())
    }
}

/// SINR of one user as a function of its receive position.
#[derive(Clone, Debug)]
pub struct RxSinr {
    /// `M^H R_k M`.
    pub rbar_k: CMat,
    /// `M^H R M`.
    pub rbar: CMat,
    /// Arrival directions, one per column of `M`.
    pub dirs: Vec<Point>,
    pub noise: f64,
}

impl RxSinr {
    pub fn new(layout: &AntennaLayout, ch: &ChannelSet, k: usize, r_k: &CMat, r: &CMat) -> Self {
        let n = layout.n();
        let l = ch.l;
        let mut m = CMat::zeros(n * ch.m_t, l * ch.m_t);
        let mut dirs = Vec::with_capacity(l * ch.m_t);
        for t in 0..ch.m_t {
            let link = ch.link(t, k);
            for (i, &u) in layout.tx[t].iter().enumerate() {
                for p in 0..l {
                    // h_e = sum_l conj(g_l) b_l exp(+j k d_l . u)
                    m[(t * n + i, t * l + p)] = link.gains[p].conj() * phase(WAVENUMBER * dot(link.tx_dirs[p], u));
                }
            }
            dirs.extend_from_slice(&link.rx_dirs);
        }
        let ma = m.adjoint();
        RxSinr { rbar_k: &ma * r_k * &m, rbar: &ma * r * &m, dirs, noise: ch.noise_ue[k] }
    }

    pub fn steering(&self, v: Point) -> CVec {
        CVec::from_iterator(self.dirs.len(), self.dirs.iter().map(|d| phase(-WAVENUMBER * dot(*d, v))))
    }

    fn part(&self, x: &CMat, b: &CVec) -> (f64, Point) {
        let xb = x * b;
        let val = b.dotc(&xb).re;
        let mut g = [0.0; 2];
        for ((bl, xl), d) in b.iter().zip(xb.iter()).zip(&self.dirs) {
            let s = -2.0 * WAVENUMBER * (bl.conj() * xl).im;
            g[0] += s * d[0];
            g[1] += s * d[1];
        }
        (val, g)
    }

    /// SINR and its gradient at `v`.
    pub fn eval(&self, v: Point) -> (f64, Point) {
        let b = self.steering(v);
        let (num, gn) = self.part(&self.rbar_k, &b);
        let (tot, gt) = self.part(&self.rbar, &b);
        let (num, gn) = if num > 0.0 { (num, gn) } else { (0.0, [0.0; 2]) };
        let mut inter = tot - num;
        let mut gi = [gt[0] - gn[0], gt[1] - gn[1]];
        if inter < 0.0 {
            if inter < -1e-9 * num.max(self.noise) {
                warn!("negative interference {inter:.3e} clamped to zero");
            }
            inter = 0.0;
            gi = [0.0; 2];
        }
        let d = inter + self.noise;
        let s = num / d;
        (s, [(gn[0] * d - num * gi[0]) / (d * d), (gn[1] * d - num * gi[1]) / (d * d)])
    }

    pub fn sinr(&self, v: Point) -> f64 {
        self.eval(v).0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaOutcome {
    pub v: Point,
    pub sinr: f64,
    pub iterations: usize,
    /// Whether the returned point meets the target; only meaningful for the
    /// feasibility baseline.
    pub feasible: bool,
}

fn ascend(f: &RxSinr, v0: Point, region: &Region, cfg: &GaConfig, stop_at: Option<f64>) -> GaOutcome {
    let (s0, g0) = f.eval(v0);
    let mut best = GaOutcome { v: v0, sinr: s0, iterations: 0, feasible: stop_at.is_none_or(|g| s0 >= g) };
    if let Some(target) = stop_at {
        if s0 >= target {
            return best;
        }
    }
    let a = cfg.a.unwrap_or_else(|| 1.0 / (1.0 + dot(g0, g0).sqrt()));
    let (mut v, mut g) = (v0, g0);
    for it in 1..=cfg.max_iter {
        if g == [0.0; 2] {
            break;
        }
        let theta = a / (it as f64 + cfg.b);
        v = region.clip([v[0] + theta * g[0], v[1] + theta * g[1]]);
        let (s, gv) = f.eval(v);
        g = gv;
        if let Some(target) = stop_at {
            if s >= target {
                return GaOutcome { v, sinr: s, iterations: it, feasible: true };
            }
        }
        if s > best.sinr || !cfg.track_best {
            best = GaOutcome { v, sinr: s, iterations: it, feasible: best.feasible };
        }
    }
    best
}

/// Gradient ascent on the SINR within the receive region, returning the
/// best iterate visited.
pub fn ga_optimize(f: &RxSinr, v0: Point, region: &Region, cfg: &GaConfig) -> GaOutcome {
    ascend(f, v0, region, cfg, None)
}

/// Same iteration, stopping at the first point whose SINR reaches `gamma`.
/// If none does, the last best point is returned with `feasible == false`.
pub fn feasibility_baseline(f: &RxSinr, v0: Point, region: &Region, gamma: f64, cfg: &GaConfig) -> GaOutcome {
    let mut out = ascend(f, v0, region, cfg, Some(gamma));
    out.feasible = out.sinr >= gamma;
    out
}

/// How receive positions are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxRule {
    #[default]
    SinrMax,
    FeasibilityStop,
}

/// Updates every user position. A new position is kept only if the user's
/// normalized margin stays at least `-nu`, so the penalty slack never grows.
pub fn update_all(
    layout: &mut AntennaLayout,
    ch: &ChannelSet,
    r_k: &[CMat],
    r: &CMat,
    gamma: &[f64],
    nu: f64,
    cfg: &GaConfig,
    rule: RxRule,
) -> Vec<GaOutcome> {
    use rayon::prelude::*;
    let region = layout.region_rx;
    let snapshot = layout.clone();
    let outcomes: Vec<GaOutcome> = (0..ch.k)
        .into_par_iter()
        .map(|k| {
            let f = RxSinr::new(&snapshot, ch, k, &r_k[k], r);
            let v0 = snapshot.ue[k];
            let out = match rule {
                RxRule::SinrMax => ga_optimize(&f, v0, &region, cfg),
                RxRule::FeasibilityStop => feasibility_baseline(&f, v0, &region, gamma[k], cfg),
            };
            let margin = |v: Point| {
                let mut l = snapshot.clone();
                l.ue[k] = v;
                let h = stacked_channel(&l, ch, k);
                ((1.0 + gamma[k]) * quad(&h, &r_k[k]) - gamma[k] * quad(&h, r)) / ch.noise_ue[k] - gamma[k]
            };
            if out.v != v0 && margin(out.v) + nu >= 0.0 {
                out
            } else {
                GaOutcome { v: v0, sinr: f.sinr(v0), iterations: out.iterations, feasible: out.feasible }
            }
        })
        .collect();
    for (k, o) in outcomes.iter().enumerate() {
        layout.ue[k] = o.v;
    }
    outcomes
}
