//! Field responses, channel vectors, SINR and the sensing objective.

use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::scenario::{ChannelSet, LinkChannel};
use crate::{CMat, CVec, Error, Point, C64, MIN_SEPARATION, WAVENUMBER};

/// Phase factors `exp(-j 2 pi d . u)` for every direction `d`.
pub fn tx_field_vector(u: Point, dirs: &[Point]) -> CVec {
    CVec::from_iterator(dirs.len(), dirs.iter().map(|d| phase(-WAVENUMBER * dot(*d, u))))
}

/// Receive-side field response; identical in form to the transmit one.
pub fn rx_field_vector(v: Point, dirs: &[Point]) -> CVec {
    tx_field_vector(v, dirs)
}

#[inline]
pub fn phase(theta: f64) -> C64 {
    C64::new(theta.cos(), theta.sin())
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Axis-aligned rectangle centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Region {
    pub width: f64,
    pub height: f64,
}

impl Region {
    pub fn new(dims: Point) -> Self {
        Region { width: dims[0], height: dims[1] }
    }

    pub fn lo(&self) -> Point {
        [-0.5 * self.width, -0.5 * self.height]
    }

    pub fn hi(&self) -> Point {
        [0.5 * self.width, 0.5 * self.height]
    }

    pub fn clip(&self, p: Point) -> Point {
        let (lo, hi) = (self.lo(), self.hi());
        [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
    }

    /// Distance to the boundary, negative outside.
    pub fn margin(&self, p: Point) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        (p[0] - lo[0]).min(hi[0] - p[0]).min(p[1] - lo[1]).min(hi[1] - p[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AntennaLayout {
    /// `tx[t][n]` is element `n` of transmitter `t`.
    pub tx: Vec<Vec<Point>>,
    pub ue: Vec<Point>,
    pub region_tx: Region,
    pub region_rx: Region,
}

impl AntennaLayout {
    pub fn n(&self) -> usize {
        self.tx.first().map_or(0, Vec::len)
    }

    /// Smallest distance between two elements of the same transmitter.
    pub fn min_separation(&self) -> f64 {
        self.tx.iter().map(|u| min_pairwise(u)).fold(f64::INFINITY, f64::min)
    }

    pub fn separation_ok(&self, tol: f64) -> bool {
        self.min_separation() >= MIN_SEPARATION - tol
    }
}

pub fn min_pairwise(pts: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.min((pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]));
        }
    }
    best
}

/// Column form `h_{t,k}` of the link channel; its conjugate transpose is
/// `b^H Sigma A` for the given transmit elements and user position.
pub fn channel_vector(u_t: &[Point], v: Point, link: &LinkChannel) -> CVec {
    let b = rx_field_vector(v, &link.rx_dirs);
    // c = Sigma^H b, so that h^H_n = c^H a_n
    let c: Vec<C64> = b.iter().zip(&link.gains).map(|(bl, g)| g.conj() * bl).collect();
    CVec::from_iterator(
        u_t.len(),
        u_t.iter().map(|&u| {
            let mut s = C64::new(0.0, 0.0);
            for (cl, d) in c.iter().zip(&link.tx_dirs) {
                s += cl.conj() * phase(-WAVENUMBER * dot(*d, u));
            }
            s.conj()
        }),
    )
}

/// Stacked channel of user `k` over all transmitters, length `N M_t`.
pub fn stacked_channel(layout: &AntennaLayout, ch: &ChannelSet, k: usize) -> CVec {
    let n = layout.n();
    let mut h = CVec::zeros(n * ch.m_t);
    for t in 0..ch.m_t {
        let ht = channel_vector(&layout.tx[t], layout.ue[k], ch.link(t, k));
        h.rows_mut(t * n, n).copy_from(&ht);
    }
    h
}

pub fn all_channels(layout: &AntennaLayout, ch: &ChannelSet) -> Vec<CVec> {
    (0..ch.k).map(|k| stacked_channel(layout, ch, k)).collect()
}

/// Real part of `x^H M x`.
pub fn quad(x: &CVec, m: &CMat) -> f64 {
    (x.adjoint() * m * x)[(0, 0)].re
}

/// `(A + A^H) / 2`, logging when the skew part is not negligible.
pub fn hermitize(a: &CMat) -> CMat {
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let skew = (a - a.adjoint()).norm();
    if skew > 1e-9 * a.norm().max(f64::MIN_POSITIVE) {
        warn!("covariance skew part {skew:.3e} exceeds tolerance");
    }
    h
}

/// SINR of a user with stacked channel `h`, own covariance `r_k` and total
/// transmit covariance `r`.
pub fn sinr(h: &CVec, r_k: &CMat, r: &CMat, noise: f64) -> f64 {
    let num = quad(h, r_k).max(0.0);
    let mut interference = quad(h, r) - num;
    if interference < 0.0 {
        if interference < -1e-9 * num.max(noise) {
            warn!("negative interference {interference:.3e} clamped to zero");
        }
        interference = 0.0;
    }
    num / (interference + noise)
}

/// SINR with explicit beamformers and a sensing covariance.
pub fn sinr_beamformers(h: &CVec, k: usize, w: &[CVec], r0: &CMat, noise: f64) -> f64 {
    let gain = |x: &CVec| h.dotc(x).norm_sqr();
    let num = gain(&w[k]);
    let inter: f64 = w.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, x)| gain(x)).sum::<f64>() + quad(h, r0).max(0.0);
    num / (inter + noise)
}

/// `h^H [(1 + gamma) R_k - gamma R] h - gamma sigma^2`; nonnegative exactly
/// when the SINR meets `gamma`.
pub fn zeta_tilde(h: &CVec, r_k: &CMat, r: &CMat, gamma: f64, noise: f64) -> f64 {
    (1.0 + gamma) * quad(h, r_k) - gamma * quad(h, r) - gamma * noise
}

/// `N x N` block `(i, j)` of a matrix with `m` block rows and columns.
pub fn block(a: &CMat, i: usize, j: usize, n: usize) -> Result<CMat, Error> {
    let m = a.nrows() / n;
    if a.nrows() != a.ncols() || a.nrows() % n != 0 {
        return Err(Error::Dimension(format!("{}x{} is not a grid of {n}x{n} blocks", a.nrows(), a.ncols())));
    }
    for idx in [i, j] {
        if idx >= m {
            return Err(Error::OutOfRange { index: idx, len: m });
        }
    }
    Ok(a.view((i * n, j * n), (n, n)).into_owned())
}

/// Per-transmitter powers `tr(E_t R E_t^H)`.
pub fn tx_powers(r: &CMat, n: usize) -> Vec<f64> {
    (0..r.nrows() / n).map(|t| (0..n).map(|i| r[(t * n + i, t * n + i)].re).sum()).collect()
}

/// Weights of the sensing objective: the per-receiver blocks of `Psi`, the
/// sensing path losses, the snapshot count and the array size.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingWeights {
    /// `psi[r]` is the `M_t x M_t` block of receiver `r`.
    pub psi: Vec<CMat>,
    /// `beta[t * m_r + r]`.
    pub beta: Vec<f64>,
    pub m_t: usize,
    pub m_r: usize,
    pub t_snapshots: usize,
    pub n: usize,
}

impl SensingWeights {
    /// Expected weights `E{alpha alpha^H} / sigma_r^2` for independent
    /// reflection coefficients: block diagonal with the RCS variances.
    pub fn expected(ch: &ChannelSet, t_snapshots: usize) -> Self {
        let psi = (0..ch.m_r)
            .map(|r| {
                let mut p = CMat::zeros(ch.m_t, ch.m_t);
                for t in 0..ch.m_t {
                    p[(t, t)] = C64::new(ch.rcs_variance[t * ch.m_r + r] / ch.noise_rx[r], 0.0);
                }
                p
            })
            .collect();
        Self::with_psi(ch, psi, t_snapshots)
    }

    /// Weights `alpha alpha^H / sigma_r^2` from the realized coefficients.
    pub fn genie(ch: &ChannelSet, t_snapshots: usize) -> Self {
        let psi = (0..ch.m_r)
            .map(|r| {
                let a = CVec::from_iterator(ch.m_t, (0..ch.m_t).map(|t| ch.rcs[t * ch.m_r + r]));
                &a * a.adjoint() / C64::new(ch.noise_rx[r], 0.0)
            })
            .collect();
        Self::with_psi(ch, psi, t_snapshots)
    }

    pub fn with_psi(ch: &ChannelSet, psi: Vec<CMat>, t_snapshots: usize) -> Self {
        SensingWeights { psi, beta: ch.beta.clone(), m_t: ch.m_t, m_r: ch.m_r, t_snapshots, n: ch.n }
    }

    /// `sum_r [Psi_r]_{ij} sqrt(beta_ir beta_jr)`.
    pub fn coupling(&self, i: usize, j: usize) -> C64 {
        (0..self.m_r)
            .map(|r| self.psi[r][(i, j)] * (self.beta[i * self.m_r + r] * self.beta[j * self.m_r + r]).sqrt())
            .sum()
    }

    /// `T N` times the coupling matrix.
    pub fn scaled_coupling(&self) -> CMat {
        let s = (self.t_snapshots * self.n) as f64;
        CMat::from_fn(self.m_t, self.m_t, |i, j| self.coupling(i, j) * s)
    }
}

/// Sensing steering vectors `a_{t,0}` for every transmitter.
pub fn sensing_steering(layout: &AntennaLayout, ch: &ChannelSet) -> Vec<CVec> {
    (0..ch.m_t)
        .map(|t| CVec::from_iterator(layout.tx[t].len(), layout.tx[t].iter().map(|&u| phase(-WAVENUMBER * dot(ch.sensing_dirs[t], u)))))
        .collect()
}

/// Matrix `Q` with `omega(R) = Re tr(Q R)`: block `(j, i)` equals
/// `T N c_ij a_j a_i^H`.
pub fn omega_matrix(layout: &AntennaLayout, ch: &ChannelSet, w: &SensingWeights) -> CMat {
    let a = sensing_steering(layout, ch);
    let c = w.scaled_coupling();
    let n = layout.n();
    let mut q = CMat::zeros(n * ch.m_t, n * ch.m_t);
    for i in 0..ch.m_t {
        for j in 0..ch.m_t {
            let blk = &a[j] * a[i].adjoint() * c[(i, j)];
            q.view_mut((j * n, i * n), (n, n)).copy_from(&blk);
        }
    }
    hermitize(&q)
}

/// `Re tr(Q R)`.
pub fn omega(q: &CMat, r: &CMat) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..q.nrows() {
        for j in 0..q.ncols() {
            s += q[(i, j)] * r[(j, i)];
        }
    }
    if s.im.abs() > 1e-9 * s.re.abs().max(1e-300) {
        warn!("sensing objective has imaginary residue {:.3e}", s.im);
    }
    s.re
}

/// Sensing objective evaluated term by term from the block sums.
pub fn omega_direct(r: &CMat, layout: &AntennaLayout, ch: &ChannelSet, w: &SensingWeights) -> f64 {
    let a = sensing_steering(layout, ch);
    let c = w.scaled_coupling();
    let n = layout.n();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..ch.m_t {
        for j in 0..ch.m_t {
            let rij = r.view((i * n, j * n), (n, n));
            s += c[(i, j)] * (a[i].adjoint() * rij * &a[j])[(0, 0)];
        }
    }
    s.re
}

/// Dense block-selection matrix `E_i` of size `N x N M_t`.
pub fn selection_matrix(i: usize, n: usize, m_t: usize) -> CMat {
    let mut e = DMatrix::zeros(n, n * m_t);
    for d in 0..n {
        e[(d, i * n + d)] = C64::new(1.0, 0.0);
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_field_vector_is_ones() {
        let v = tx_field_vector([0.0, 0.0], &[[0.3, 0.1], [-0.2, 0.9]]);
        assert!(v.iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn block_reports_range() {
        let a = CMat::identity(8, 8);
        assert!(matches!(block(&a, 2, 0, 4), Err(Error::OutOfRange { index: 2, len: 2 })));
        assert!(block(&a, 0, 0, 3).is_err());
        assert_eq!(block(&a, 1, 1, 4).unwrap(), CMat::identity(4, 4));
        assert_eq!(block(&a, 0, 1, 4).unwrap(), CMat::zeros(4, 4));
    }

    #[test]
    fn region_geometry() {
        let r = Region::new([2.0, 1.0]);
        assert_eq!(r.clip([3.0, -3.0]), [1.0, -0.5]);
        assert!((r.margin([0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(r.margin([1.5, 0.0]) < 0.0);
    }

    #[test]
    fn sinr_limits() {
        let h = CVec::from_vec(vec![C64::new(1.0, 0.5), C64::new(-0.3, 0.2)]);
        let r = &h * h.adjoint() + CMat::identity(2, 2);
        assert_eq!(sinr(&h, &CMat::zeros(2, 2), &r, 0.1), 0.0);
        let full = sinr(&h, &r, &r, 0.1);
        assert!((full - quad(&h, &r) / 0.1).abs() < 1e-12);
        assert!((zeta_tilde(&CVec::zeros(2), &r, &r, 2.0, 0.1) + 0.2).abs() < 1e-15);
    }
}
