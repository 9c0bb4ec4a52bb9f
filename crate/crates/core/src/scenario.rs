//! Topologies, channel realizations and experiment configuration.
//!
//! Every random quantity of one trial comes from a single ChaCha stream
//! selected by `(seed, trial)`, so trials can be generated independently and in
//! any order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Point, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// Distance-dependent path loss from the drawn topology.
    Geometric,
    /// Unit-variance paths, fixed sensing gain and a fixed transmit SNR.
    Normalized,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioConfig {
    pub m_t: usize,
    pub m_r: usize,
    pub k: usize,
    pub n: usize,
    pub l: usize,
    /// Transmit region `[X, Y]` in wavelengths.
    pub region_tx: Point,
    /// User region `[X, Y]` in wavelengths.
    pub region_rx: Point,
    /// Per-transmitter power budget, watts.
    pub p_t: f64,
    /// Linear SINR target shared by all users.
    pub gamma: f64,
    pub p_fa: f64,
    pub t_snapshots: usize,
    pub model: ChannelModel,
    pub seed: u64,
    pub radius_m: f64,
    /// Receiver noise power, watts. Ignored by the normalized model.
    pub noise: f64,
    pub rcs_variance: f64,
    pub lambda_m: f64,
    /// Fixed target position in meters; uniform in the disk when absent.
    pub target_m: Option<Point>,
    /// Transmit SNR `P_t / noise` of the normalized model.
    pub snr: f64,
    /// Sensing path loss of the normalized model.
    pub sensing_gain: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            m_t: 4,
            m_r: 2,
            k: 4,
            n: 4,
            l: 12,
            region_tx: [2.0, 2.0],
            region_rx: [1.0, 1.0],
            p_t: dbm_to_watts(20.0),
            gamma: 1.0,
            p_fa: 0.05,
            t_snapshots: 10,
            model: ChannelModel::Geometric,
            seed: 0,
            radius_m: 200.0,
            noise: dbm_to_watts(-95.0),
            rcs_variance: 1.0,
            lambda_m: 0.1,
            target_m: None,
            snr: 4.0,
            sensing_gain: 0.05,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RegionSpec {
    Square(f64),
    Rect([f64; 2]),
}

impl RegionSpec {
    fn dims(&self) -> Point {
        match *self {
            RegionSpec::Square(s) => [s, s],
            RegionSpec::Rect(r) => r,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    m_t: Option<usize>,
    m_r: Option<usize>,
    k: Option<usize>,
    n: Option<usize>,
    l: Option<usize>,
    region_tx_lambda: Option<RegionSpec>,
    region_rx_lambda: Option<RegionSpec>,
    p_t_dbm: Option<f64>,
    gamma_db: Option<f64>,
    gamma: Option<f64>,
    p_fa: Option<f64>,
    t_snapshots: Option<usize>,
    model: Option<ChannelModel>,
    seed: Option<u64>,
    radius_m: Option<f64>,
    noise_dbm: Option<f64>,
    rcs_variance: Option<f64>,
    lambda_m: Option<f64>,
    target_m: Option<Point>,
    snr: Option<f64>,
    sensing_gain: Option<f64>,
    // parsed by the optimizer settings
    #[serde(rename = "optimizer")]
    _optimizer: Option<toml::Table>,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioConfig {
    /// Parses the TOML form. Missing keys take the defaults; unknown keys are
    /// rejected.
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let d = ScenarioConfig::default();
        if raw.gamma.is_some() && raw.gamma_db.is_some() {
            return Err(Error::InvalidConfig("give either gamma or gamma_db, not both".into()));
        }
        let gamma = match (raw.gamma, raw.gamma_db) {
            (Some(g), _) => g,
            (_, Some(db)) => db_to_linear(db),
            _ => d.gamma,
        };
        let cfg = ScenarioConfig {
            m_t: raw.m_t.unwrap_or(d.m_t),
            m_r: raw.m_r.unwrap_or(d.m_r),
            k: raw.k.unwrap_or(d.k),
            n: raw.n.unwrap_or(d.n),
            l: raw.l.unwrap_or(d.l),
            region_tx: raw.region_tx_lambda.map_or(d.region_tx, |r| r.dims()),
            region_rx: raw.region_rx_lambda.map_or(d.region_rx, |r| r.dims()),
            p_t: raw.p_t_dbm.map_or(d.p_t, dbm_to_watts),
            gamma,
            p_fa: raw.p_fa.unwrap_or(d.p_fa),
            t_snapshots: raw.t_snapshots.unwrap_or(d.t_snapshots),
            model: raw.model.unwrap_or(d.model),
            seed: raw.seed.unwrap_or(d.seed),
            radius_m: raw.radius_m.unwrap_or(d.radius_m),
            noise: raw.noise_dbm.map_or(d.noise, dbm_to_watts),
            rcs_variance: raw.rcs_variance.unwrap_or(d.rcs_variance),
            lambda_m: raw.lambda_m.unwrap_or(d.lambda_m),
            target_m: raw.target_m,
            snr: raw.snr.unwrap_or(d.snr),
            sensing_gain: raw.sensing_gain.unwrap_or(d.sensing_gain),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.m_t == 0 || self.m_r == 0 || self.n == 0 || self.l == 0 {
            return bad("m_t, m_r, n and l must be at least 1");
        }
        if self.t_snapshots == 0 {
            return bad("t_snapshots must be at least 1");
        }
        if self.region_tx.iter().chain(&self.region_rx).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("region sizes must be finite and nonnegative");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be finite and nonnegative");
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return bad("p_fa must lie in (0, 1)");
        }
        if !(self.p_t > 0.0) || !(self.noise > 0.0) || !(self.lambda_m > 0.0) {
            return bad("power, noise and wavelength must be positive");
        }
        if !(self.radius_m >= 0.0) || !(self.rcs_variance > 0.0) || !(self.snr > 0.0) || !(self.sensing_gain > 0.0) {
            return bad("radius must be nonnegative; rcs variance, snr and sensing gain positive");
        }
        Ok(())
    }

    /// Noise power at users and sensing receivers.
    pub fn noise_power(&self) -> f64 {
        match self.model {
            ChannelModel::Geometric => self.noise,
            ChannelModel::Normalized => self.p_t / self.snr,
        }
    }
}

/// Random stream of trial `trial` under master seed `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Topology {
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    pub target_position: Point,
    pub tx_indices: Vec<usize>,
    pub rx_indices: Vec<usize>,
}

fn uniform_in_disk(radius: f64, rng: &mut impl Rng) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let th = 2.0 * PI * rng.random::<f64>();
    [r * th.cos(), r * th.sin()]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn generate_topology(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<Topology, Error> {
    let n_ap = cfg.m_t + cfg.m_r;
    if cfg.radius_m <= 0.0 && n_ap + cfg.k > 0 {
        return Err(Error::InvalidConfig("radius must be positive".into()));
    }
    let ap_positions: Vec<Point> = (0..n_ap).map(|_| uniform_in_disk(cfg.radius_m, rng)).collect();
    let ue_positions: Vec<Point> = (0..cfg.k).map(|_| uniform_in_disk(cfg.radius_m, rng)).collect();
    let target_position = match cfg.target_m {
        Some(p) => p,
        None => uniform_in_disk(cfg.radius_m, rng),
    };
    let mut order: Vec<usize> = (0..n_ap).collect();
    order.sort_by(|&a, &b| {
        dist(ap_positions[a], target_position)
            .total_cmp(&dist(ap_positions[b], target_position))
            .then(a.cmp(&b))
    });
    let mut rx_indices = order[..cfg.m_r].to_vec();
    rx_indices.sort_unstable();
    let tx_indices = (0..n_ap).filter(|i| !rx_indices.contains(i)).collect();
    Ok(Topology { ap_positions, ue_positions, target_position, tx_indices, rx_indices })
}

/// Elevation/azimuth pair `(phi, psi)`.
pub type Angles = (f64, f64);

/// Direction vector `[sin(phi) cos(psi), cos(phi)]` of a planar array.
pub fn direction((phi, psi): Angles) -> Point {
    [phi.sin() * psi.cos(), phi.cos()]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkChannel {
    pub aod: Vec<Angles>,
    pub aoa: Vec<Angles>,
    pub gains: Vec<C64>,
    /// Cached directions of `aod`.
    pub tx_dirs: Vec<Point>,
    /// Cached directions of `aoa`.
    pub rx_dirs: Vec<Point>,
}

impl LinkChannel {
    pub fn new(aod: Vec<Angles>, aoa: Vec<Angles>, gains: Vec<C64>) -> Self {
        let tx_dirs = aod.iter().copied().map(direction).collect();
        let rx_dirs = aoa.iter().copied().map(direction).collect();
        LinkChannel { aod, aoa, gains, tx_dirs, rx_dirs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelSet {
    pub m_t: usize,
    pub m_r: usize,
    pub k: usize,
    pub n: usize,
    pub l: usize,
    /// Link `(t, k)` at index `t * k_count + k`.
    pub links: Vec<LinkChannel>,
    pub sensing_aod: Vec<Angles>,
    pub sensing_dirs: Vec<Point>,
    /// `beta[t * m_r + r]`.
    pub beta: Vec<f64>,
    /// `rcs_variance[t * m_r + r]`.
    pub rcs_variance: Vec<f64>,
    /// One realized reflection coefficient per `(t, r)`, same layout.
    pub rcs: Vec<C64>,
    pub noise_ue: Vec<f64>,
    pub noise_rx: Vec<f64>,
    pub lambda_m: f64,
}

impl ChannelSet {
    pub fn link(&self, t: usize, k: usize) -> &LinkChannel {
        &self.links[t * self.k + k]
    }

    pub fn beta(&self, t: usize, r: usize) -> f64 {
        self.beta[t * self.m_r + r]
    }
}

fn angle_pair(rng: &mut impl Rng) -> Angles {
    (PI * rng.random::<f64>(), PI * rng.random::<f64>())
}

/// Circularly symmetric complex Gaussian with the given variance.
pub fn complex_gaussian(var: f64, rng: &mut impl Rng) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Path-loss constant at 1 m and exponent of the geometric model.
pub const REF_PATH_LOSS: f64 = 1e-4;
pub const PATH_LOSS_EXPONENT: f64 = 2.8;

pub fn generate_channels(top: &Topology, cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<ChannelSet, Error> {
    let (m_t, m_r, k_count, l) = (cfg.m_t, cfg.m_r, cfg.k, cfg.l);
    let mut links = Vec::with_capacity(m_t * k_count);
    for &t in &top.tx_indices {
        for (k, &ue) in top.ue_positions.iter().enumerate() {
            let var = match cfg.model {
                ChannelModel::Geometric => {
                    let d = dist(top.ap_positions[t], ue);
                    if d < 1e-9 {
                        return Err(Error::InvalidGeometry(format!("user {k} coincides with access point {t}")));
                    }
                    REF_PATH_LOSS * d.powf(-PATH_LOSS_EXPONENT) / l as f64
                }
                ChannelModel::Normalized => 1.0 / l as f64,
            };
            let aod = (0..l).map(|_| angle_pair(rng)).collect();
            let aoa = (0..l).map(|_| angle_pair(rng)).collect();
            let gains = (0..l).map(|_| complex_gaussian(var, rng)).collect();
            links.push(LinkChannel::new(aod, aoa, gains));
        }
    }
    let sensing_aod: Vec<Angles> = (0..m_t).map(|_| angle_pair(rng)).collect();
    let sensing_dirs = sensing_aod.iter().copied().map(direction).collect();
    let mut beta = Vec::with_capacity(m_t * m_r);
    for &t in &top.tx_indices {
        for &r in &top.rx_indices {
            beta.push(match cfg.model {
                ChannelModel::Geometric => {
                    let dt = dist(top.ap_positions[t], top.target_position);
                    let dr = dist(top.ap_positions[r], top.target_position);
                    if dt < 1e-9 || dr < 1e-9 {
                        return Err(Error::InvalidGeometry("target coincides with an access point".into()));
                    }
                    cfg.lambda_m.powi(2) / ((4.0 * PI).powi(3) * dt * dt * dr * dr)
                }
                ChannelModel::Normalized => cfg.sensing_gain,
            });
        }
    }
    let rcs_variance = vec![cfg.rcs_variance; m_t * m_r];
    let rcs = rcs_variance.iter().map(|&v| complex_gaussian(v, rng)).collect();
    let noise = cfg.noise_power();
    Ok(ChannelSet {
        m_t,
        m_r,
        k: k_count,
        n: cfg.n,
        l,
        links,
        sensing_aod,
        sensing_dirs,
        beta,
        rcs_variance,
        rcs,
        noise_ue: vec![noise; k_count],
        noise_rx: vec![noise; m_r],
        lambda_m: cfg.lambda_m,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub topology: Topology,
    pub channels: ChannelSet,
}

impl Scenario {
    /// Topology and channels of trial `trial` under the configured seed.
    pub fn generate(cfg: &ScenarioConfig, trial: u64) -> Result<Self, Error> {
        cfg.validate()?;
        let mut rng = trial_rng(cfg.seed, trial);
        let topology = generate_topology(cfg, &mut rng)?;
        let channels = generate_channels(&topology, cfg, &mut rng)?;
        Ok(Scenario { topology, channels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_keys_and_units() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            m_t = 3
            k = 0
            region_tx_lambda = [2.0, 1.0]
            region_rx_lambda = 1.5
            p_t_dbm = 30
            gamma_db = 10
            model = "normalized"

            [optimizer]
            epsilon = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(cfg.m_t, 3);
        assert_eq!(cfg.k, 0);
        assert_eq!(cfg.region_tx, [2.0, 1.0]);
        assert_eq!(cfg.region_rx, [1.5, 1.5]);
        assert!((cfg.p_t - 1.0).abs() < 1e-12);
        assert!((cfg.gamma - 10.0).abs() < 1e-12);
        assert_eq!(cfg.model, ChannelModel::Normalized);
        assert!((cfg.p_t / cfg.noise_power() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ScenarioConfig::from_toml("m_t = 2\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(ScenarioConfig::from_toml("p_fa = 1.0").is_err());
        assert!(ScenarioConfig::from_toml("gamma = 1.0\ngamma_db = 0.0").is_err());
    }

    #[test]
    fn zero_radius_rejected() {
        let cfg = ScenarioConfig { radius_m: 0.0, ..ScenarioConfig::default() };
        assert!(matches!(generate_topology(&cfg, &mut trial_rng(0, 0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn coincident_user_rejected() {
        let cfg = ScenarioConfig { m_t: 1, m_r: 1, k: 1, ..ScenarioConfig::default() };
        let top = Topology {
            ap_positions: vec![[1.0, 2.0], [50.0, 0.0]],
            ue_positions: vec![[1.0, 2.0]],
            target_position: [10.0, 10.0],
            tx_indices: vec![0],
            rx_indices: vec![1],
        };
        assert!(matches!(generate_channels(&top, &cfg, &mut trial_rng(0, 0)), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn streams_differ_by_trial() {
        let a: u64 = trial_rng(5, 0).random();
        let b: u64 = trial_rng(5, 1).random();
        let c: u64 = trial_rng(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
