//! Chi-squared machinery, the GLR statistic and detection probability.
//!
//! The log-GLR is a quadratic form in the projection of the observation onto
//! the column space of the observation matrix. Two scalings of its law are
//! supported: [`Convention::Paper`] treats it as chi-squared with `2q`
//! degrees of freedom and noncentrality `omega`; [`Convention::Half`] treats it
//! as half of a chi-squared with noncentrality `2 omega`, which is what a
//! circular complex Gaussian noise model produces. [`calibrate_samples`]
//! decides between them from simulated null draws.

use std::fmt;
use std::str::FromStr;

use nalgebra::ColPivQR;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::physics::{sensing_steering, AntennaLayout};
use crate::scenario::{complex_gaussian, ChannelSet};
use crate::{CMat, CVec, Error, C64};

/// Noncentrality above which the Poisson series is refused.
pub const MAX_NONCENTRALITY: f64 = 1e6;
const TAIL: f64 = 1e-12;

pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(dof).expect("positive degrees of freedom").cdf(x)
}

/// Noncentral chi-squared CDF as a Poisson mixture of central CDFs, summed
/// outward from the heaviest term until the unsummed weight is below `1e-12`.
pub fn nc_chi2_cdf(x: f64, dof: f64, nc: f64) -> Result<f64, Error> {
    if !(nc >= 0.0) || nc > MAX_NONCENTRALITY {
        return Err(Error::Overflow(nc));
    }
    if nc == 0.0 {
        return Ok(chi2_cdf(x, dof));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let mean = 0.5 * nc;
    let weight = |j: usize| (-mean + j as f64 * mean.ln() - ln_gamma(j as f64 + 1.0)).exp();
    let center = mean.floor() as usize;
    let mut total_w = weight(center);
    let mut sum = total_w * chi2_cdf(x, dof + 2.0 * center as f64);
    let (mut up, mut down) = (center + 1, center as isize - 1);
    while 1.0 - total_w > TAIL {
        let wu = weight(up);
        let wd = if down >= 0 { weight(down as usize) } else { 0.0 };
        if wu == 0.0 && wd == 0.0 {
            break;
        }
        if wu >= wd {
            sum += wu * chi2_cdf(x, dof + 2.0 * up as f64);
            total_w += wu;
            up += 1;
        } else {
            sum += wd * chi2_cdf(x, dof + 2.0 * down as f64);
            total_w += wd;
            down -= 1;
        }
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// Inverse of [`chi2_cdf`] by bisection to `1e-10`.
pub fn chi2_quantile(p: f64, dof: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    assert!(p < 1.0, "quantile of probability {p}");
    let mut hi = dof.max(1.0);
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Paper,
    Half,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Paper => "paper",
            Convention::Half => "half",
        })
    }
}

impl FromStr for Convention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Convention::Paper),
            "half" => Ok(Convention::Half),
            _ => Err(format!("unknown convention {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DetectorConfig {
    /// Complex dimension `M_r M_t` of the unknown coefficients.
    pub q: usize,
    pub p_fa: f64,
    pub convention: Convention,
}

impl DetectorConfig {
    pub fn dof(&self) -> f64 {
        2.0 * self.q as f64
    }

    /// Multiplier applied to the log-GLR before comparing with the threshold.
    pub fn statistic_scale(&self) -> f64 {
        match self.convention {
            Convention::Paper => 1.0,
            Convention::Half => 2.0,
        }
    }
}

/// `ln gamma_0`: the `1 - P_FA` quantile of the central law.
pub fn glr_threshold(cfg: &DetectorConfig) -> f64 {
    if cfg.p_fa >= 1.0 {
        return 0.0;
    }
    chi2_quantile(1.0 - cfg.p_fa, cfg.dof())
}

/// Probability that the scaled statistic exceeds the threshold when the
/// noncentrality is `omega`. Equals the false-alarm rate at `omega = 0`.
pub fn detection_probability(omega: f64, cfg: &DetectorConfig) -> Result<f64, Error> {
    if omega <= 0.0 {
        return Ok(cfg.p_fa);
    }
    let nc = omega * cfg.statistic_scale();
    Ok(1.0 - nc_chi2_cdf(glr_threshold(cfg), cfg.dof(), nc)?)
}

/// Orthonormal basis of the observation matrix, reused across draws.
#[derive(Clone, Debug)]
pub struct GlrDetector {
    basis: CMat,
    qr: ColPivQR<C64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl GlrDetector {
    /// Fails when `g` does not have full column rank at relative tolerance
    /// `1e-10`, naming the columns that depend on the others.
    pub fn new(g: &CMat) -> Result<Self, Error> {
        let (m, q) = g.shape();
        if m < q {
            return Err(Error::RankDeficient { columns: (m..q).collect() });
        }
        let qr = ColPivQR::new(g.clone());
        let r = qr.r();
        let r0 = r[(0, 0)].norm();
        // position i of the pivoted factor holds original column perm[i]
        let mut perm = nalgebra::DVector::from_iterator(q, (0..q).map(|i| i as f64));
        qr.p().permute_rows(&mut perm);
        let deficient: Vec<usize> =
            (0..q).filter(|&i| r0 == 0.0 || r[(i, i)].norm() <= 1e-10 * r0).map(|i| perm[i] as usize).collect();
        if !deficient.is_empty() {
            let mut columns = deficient;
            columns.sort_unstable();
            return Err(Error::RankDeficient { columns });
        }
        let basis = qr.q();
        Ok(GlrDetector { basis, qr })
    }

    /// `y^H P y / sigma^2` with `P` the orthogonal projector onto `range(g)`.
    pub fn statistic(&self, y: &CVec, noise: f64) -> f64 {
        (self.basis.adjoint() * y).norm_squared() / noise
    }

    /// Least-squares coefficients `(G^H G)^{-1} G^H y`.
    pub fn mle(&self, y: &CVec) -> CVec {
        let z = self.basis.adjoint() * y;
        let r = self.qr.r();
        let mut x = r.solve_upper_triangular(&z).expect("full rank checked at construction");
        self.qr.p().inv_permute_rows(&mut x);
        x
    }
}

pub fn glr_statistic(y: &CVec, g: &CMat, noise: f64) -> Result<f64, Error> {
    Ok(GlrDetector::new(g)?.statistic(y, noise))
}

pub fn mle_alpha(y: &CVec, g: &CMat) -> Result<CVec, Error> {
    Ok(GlrDetector::new(g)?.mle(y))
}

/// `T` snapshots `x ~ CN(0, R)` drawn through an eigen factor of `R`.
pub fn draw_snapshots(r: &CMat, t: usize, rng: &mut impl Rng) -> Vec<CVec> {
    let eig = r.clone().symmetric_eigen();
    let n = r.nrows();
    let f = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt());
    (0..t)
        .map(|_| {
            let z = CVec::from_iterator(n, (0..n).map(|_| complex_gaussian(1.0, rng)));
            &f * z
        })
        .collect()
}

/// Stacked observation matrix over `T` snapshots: rows ordered by
/// `(tau, r, element)`, columns by `(r, t)`, entry
/// `sqrt(beta_tr) b_r[i] a_t^H x_t[tau]`.
pub fn observation_matrix(layout: &AntennaLayout, ch: &ChannelSet, snapshots: &[CVec], rx_steering: &[CVec]) -> CMat {
    let a = sensing_steering(layout, ch);
    let n = layout.n();
    let (m_t, m_r) = (ch.m_t, ch.m_r);
    let nr = rx_steering.first().map_or(0, |b| b.len());
    let mut g = CMat::zeros(snapshots.len() * m_r * nr, m_r * m_t);
    for (tau, x) in snapshots.iter().enumerate() {
        for t in 0..m_t {
            let s = a[t].dotc(&x.rows(t * n, n));
            for r in 0..m_r {
                let amp = s * ch.beta(t, r).sqrt();
                for (i, b) in rx_steering[r].iter().enumerate() {
                    g[((tau * m_r + r) * nr + i, r * m_t + t)] = b * amp;
                }
            }
        }
    }
    g
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    pub draws: usize,
    pub p_fa: f64,
    pub threshold: f64,
    /// Empirical exceedance rate when the statistic is compared unscaled.
    pub rate_paper: f64,
    /// Empirical exceedance rate when the statistic is doubled first.
    pub rate_half: f64,
    /// Three-sigma binomial band around `p_fa`.
    pub band: (f64, f64),
    pub selected: Convention,
}

/// Picks the convention whose implied false-alarm rate on null samples of the
/// log-GLR lies inside the three-sigma band around `p_fa`.
pub fn calibrate_samples(samples: &[f64], q: usize, p_fa: f64) -> Result<CalibrationReport, Error> {
    let thr = chi2_quantile(1.0 - p_fa, 2.0 * q as f64);
    let n = samples.len() as f64;
    let rate = |scale: f64| samples.iter().filter(|&&s| scale * s >= thr).count() as f64 / n;
    let (rate_paper, rate_half) = (rate(1.0), rate(2.0));
    let sd = (p_fa * (1.0 - p_fa) / n).sqrt();
    let band = (p_fa - 3.0 * sd, p_fa + 3.0 * sd);
    let inside = |r: f64| r >= band.0 && r <= band.1;
    let selected = match (inside(rate_paper), inside(rate_half)) {
        (true, true) if (rate_half - p_fa).abs() < (rate_paper - p_fa).abs() => Convention::Half,
        (true, _) => Convention::Paper,
        (false, true) => Convention::Half,
        (false, false) => return Err(Error::CalibrationFailed { paper: rate_paper, half: rate_half }),
    };
    Ok(CalibrationReport { draws: samples.len(), p_fa, threshold: thr, rate_paper, rate_half, band, selected })
}

/// Log-GLR draws with noise only.
pub fn simulate_null(det: &GlrDetector, rows: usize, noise: f64, draws: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut y = CVec::zeros(rows);
    (0..draws)
        .map(|_| {
            y.iter_mut().for_each(|v| *v = complex_gaussian(noise, rng));
            det.statistic(&y, noise)
        })
        .collect()
}

/// Log-GLR draws with the echo `g alpha` present.
pub fn simulate_signal(det: &GlrDetector, g: &CMat, alpha: &CVec, noise: f64, draws: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mean = g * alpha;
    let mut y = CVec::zeros(mean.len());
    (0..draws)
        .map(|_| {
            for (v, m) in y.iter_mut().zip(mean.iter()) {
                *v = m + complex_gaussian(noise, rng);
            }
            det.statistic(&y, noise)
        })
        .collect()
}

/// Simulates `draws` null observations through `g` and calibrates.
pub fn calibrate_convention(g: &CMat, noise: f64, p_fa: f64, draws: usize, rng: &mut impl Rng) -> Result<CalibrationReport, Error> {
    let det = GlrDetector::new(g)?;
    let samples = simulate_null(&det, g.nrows(), noise, draws, rng);
    calibrate_samples(&samples, g.ncols(), p_fa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dof_closed_form() {
        for x in [0.1, 1.0, 3.7, 12.0] {
            assert!((chi2_cdf(x, 2.0) - (1.0 - (-x / 2.0).exp())).abs() < 1e-14);
        }
        assert!((chi2_quantile(0.95, 2.0) + 2.0 * 0.05f64.ln()).abs() < 1e-8);
        assert_eq!(chi2_cdf(0.0, 5.0), 0.0);
    }

    #[test]
    fn noncentral_degenerates_to_central() {
        assert_eq!(nc_chi2_cdf(3.0, 4.0, 0.0).unwrap(), chi2_cdf(3.0, 4.0));
        assert!(matches!(nc_chi2_cdf(3.0, 4.0, 2e6), Err(Error::Overflow(_))));
    }

    #[test]
    fn noncentral_mean_matches() {
        // E = dof + nc; integrate the survival function numerically
        let (dof, nc) = (4.0, 7.5);
        let h = 0.01;
        let mean: f64 = (0..20000).map(|i| h * (1.0 - nc_chi2_cdf((i as f64 + 0.5) * h, dof, nc).unwrap())).sum();
        assert!((mean - (dof + nc)).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn convention_parsing() {
        assert_eq!("half".parse::<Convention>().unwrap(), Convention::Half);
        assert!("x".parse::<Convention>().is_err());
        assert_eq!(Convention::Paper.to_string(), "paper");
    }

    #[test]
    fn detection_at_zero_is_false_alarm() {
        for conv in [Convention::Paper, Convention::Half] {
            let cfg = DetectorConfig { q: 8, p_fa: 0.05, convention: conv };
            assert_eq!(detection_probability(0.0, &cfg).unwrap(), 0.05);
        }
        let one = DetectorConfig { q: 1, p_fa: 1.0, convention: Convention::Paper };
        assert_eq!(glr_threshold(&one), 0.0);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let g = CMat::from_fn(4, 3, |i, j| if j == 2 { C64::new(2.0 * i as f64, 0.0) } else { C64::new((i * (j + 1)) as f64, (i + j) as f64) });
        match GlrDetector::new(&g) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns.len(), 1),
            other => panic!("{other:?}"),
        }
    }
}
