#![allow(dead_code)]

use fluid_isac::physics::{AntennaLayout, Region};
use fluid_isac::scenario::{complex_gaussian, trial_rng, ChannelModel, Scenario, ScenarioConfig};
use fluid_isac::{CMat, CVec, Point, C64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    trial_rng(seed, 99)
}

pub fn small_config() -> ScenarioConfig {
    ScenarioConfig { m_t: 2, m_r: 2, k: 2, n: 3, l: 4, model: ChannelModel::Normalized, ..Default::default() }
}

pub fn scenario(cfg: &ScenarioConfig, trial: u64) -> Scenario {
    Scenario::generate(cfg, trial).unwrap()
}

pub fn random_point(region: &Region, rng: &mut impl Rng) -> Point {
    [rng.random_range(-0.5..0.5) * region.width, rng.random_range(-0.5..0.5) * region.height]
}

/// Random positions in the regions; separation is not enforced.
pub fn random_layout(cfg: &ScenarioConfig, rng: &mut impl Rng) -> AntennaLayout {
    let (rt, rr) = (Region::new(cfg.region_tx), Region::new(cfg.region_rx));
    AntennaLayout {
        tx: (0..cfg.m_t).map(|_| (0..cfg.n).map(|_| random_point(&rt, rng)).collect()).collect(),
        ue: (0..cfg.k).map(|_| random_point(&rr, rng)).collect(),
        region_tx: rt,
        region_rx: rr,
    }
}

pub fn random_vec(dim: usize, rng: &mut impl Rng) -> CVec {
    CVec::from_iterator(dim, (0..dim).map(|_| complex_gaussian(1.0, rng)))
}

pub fn random_psd(dim: usize, rank: usize, rng: &mut impl Rng) -> CMat {
    let f = CMat::from_fn(dim, rank, |_, _| complex_gaussian(1.0, rng));
    &f * f.adjoint()
}

pub fn unit_modulus(dim: usize, rng: &mut impl Rng) -> CVec {
    CVec::from_iterator(dim, (0..dim).map(|_| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))))
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
