//! Element-wise transmit position updates by minorize-maximize.
//!
//! With every other element fixed, the normalized SINR margin of user `k`
//! and the sensing objective are trigonometric sums in the position `u` of
//! one element. Each is minorized by a concave quadratic with curvature
//! `delta`, and the resulting convex problem is solved as a small SOCP.

use std::f64::consts::PI;

use conic::{solve, Cone, ConicProblem, Settings, Status};
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::physics::{
    dot, hermitize, omega, omega_matrix, phase, quad, rx_field_vector, sensing_steering, stacked_channel, AntennaLayout,
    SensingWeights,
};
use crate::scenario::ChannelSet;
use crate::{CMat, CVec, Point, C64, MIN_SEPARATION, WAVENUMBER};

/// Everything that stays fixed while antenna positions move.
#[derive(Clone, Debug)]
pub struct PositionContext<'a> {
    pub ch: &'a ChannelSet,
    pub weights: &'a SensingWeights,
    pub r_k: &'a [CMat],
    pub r: &'a CMat,
    pub gamma: &'a [f64],
    pub eta: f64,
    /// `((1 + gamma_k) R_k - gamma_k R) / sigma_k^2`.
    r_tilde: Vec<CMat>,
}

impl<'a> PositionContext<'a> {
    pub fn new(
        ch: &'a ChannelSet,
        weights: &'a SensingWeights,
        r_k: &'a [CMat],
        r: &'a CMat,
        gamma: &'a [f64],
        eta: f64,
    ) -> Self {
        let r_tilde = r_k
            .iter()
            .zip(gamma)
            .zip(&ch.noise_ue)
            .map(|((rk, g), s)| (rk * C64::new(1.0 + g, 0.0) - r * C64::new(*g, 0.0)) / C64::new(*s, 0.0))
            .collect();
        PositionContext { ch, weights, r_k, r, gamma, eta, r_tilde }
    }

    pub fn r_tilde(&self, k: usize) -> &CMat {
        &self.r_tilde[k]
    }

    /// Normalized margin `zeta_k / sigma_k^2`; nonnegative iff user `k`
    /// meets its SINR target.
    pub fn zeta(&self, layout: &AntennaLayout, k: usize) -> f64 {
        quad(&stacked_channel(layout, self.ch, k), &self.r_tilde[k]) - self.gamma[k]
    }

    pub fn omega(&self, layout: &AntennaLayout) -> f64 {
        omega(&omega_matrix(layout, self.ch, self.weights), self.r)
    }

    /// Smallest slack that satisfies every SINR constraint.
    pub fn nu(&self, layout: &AntennaLayout) -> f64 {
        (0..self.ch.k).fold(0.0, |m, k| m.max(-self.zeta(layout, k)))
    }

    /// Penalized objective `omega - eta nu`.
    pub fn rho(&self, layout: &AntennaLayout) -> f64 {
        self.omega(layout) - self.eta * self.nu(layout)
    }
}

/// `constant + sum_i 2 Re(A_i exp(j k w_i . u))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigSum {
    pub constant: f64,
    pub terms: Vec<(C64, Point)>,
}

impl TrigSum {
    pub fn value(&self, u: Point) -> f64 {
        self.constant + self.terms.iter().map(|(a, w)| 2.0 * (a * phase(WAVENUMBER * dot(*w, u))).re).sum::<f64>()
    }

    pub fn gradient(&self, u: Point) -> Point {
        let mut g = [0.0; 2];
        for (a, w) in &self.terms {
            let s = -2.0 * WAVENUMBER * (a * phase(WAVENUMBER * dot(*w, u))).im;
            g[0] += s * w[0];
            g[1] += s * w[1];
        }
        g
    }

    pub fn hessian(&self, u: Point) -> [[f64; 2]; 2] {
        let mut h = [[0.0; 2]; 2];
        for (a, w) in &self.terms {
            let c = -2.0 * WAVENUMBER * WAVENUMBER * (a * phase(WAVENUMBER * dot(*w, u))).re;
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += c * w[i] * w[j];
                }
            }
        }
        h
    }

    /// Upper bound on the Frobenius norm of the Hessian anywhere.
    pub fn curvature_bound(&self) -> f64 {
        2.0 * WAVENUMBER * WAVENUMBER * self.terms.iter().map(|(a, w)| a.norm() * dot(*w, *w)).sum::<f64>()
    }
}

/// Concave quadratic minorant touching at `u0`.
pub fn surrogate(f: &TrigSum, delta: f64, u0: Point, u: Point) -> f64 {
    let g = f.gradient(u0);
    let d = [u[0] - u0[0], u[1] - u0[1]];
    f.value(u0) + dot(g, d) - 0.5 * delta * dot(d, d)
}

/// Position dependence of one user's normalized margin on one element.
#[derive(Clone, Debug)]
pub struct SurrogateCoeffs {
    /// Rank-one `L x L` matrix of the squared-gain term.
    pub p: CMat,
    /// Cross terms with the other elements.
    pub q: CVec,
    pub eps: f64,
    /// Departure directions of the link paths.
    pub dirs: Vec<Point>,
    pub delta: f64,
}

impl SurrogateCoeffs {
    pub fn trig(&self) -> TrigSum {
        let l = self.dirs.len();
        let mut terms = Vec::with_capacity(l * (l + 1) / 2);
        let mut constant = self.eps;
        for i in 0..l {
            constant += self.p[(i, i)].re;
            for j in i + 1..l {
                let (a, b) = (self.dirs[i], self.dirs[j]);
                terms.push((self.p[(i, j)], [a[0] - b[0], a[1] - b[1]]));
            }
        }
        for (qi, d) in self.q.iter().zip(&self.dirs) {
            terms.push((*qi, [-d[0], -d[1]]));
        }
        TrigSum { constant, terms }
    }

    pub fn value(&self, u: Point) -> f64 {
        self.trig().value(u)
    }
}

/// Position dependence of the sensing objective on one element.
#[derive(Clone, Debug)]
pub struct SensingCoeffs {
    /// Weight of `|a|^2 = 1`.
    pub p: f64,
    pub q: C64,
    pub eps: f64,
    pub dir: Point,
    pub delta: f64,
}

impl SensingCoeffs {
    pub fn trig(&self) -> TrigSum {
        TrigSum { constant: self.p + self.eps, terms: vec![(self.q, self.dir)] }
    }

    pub fn value(&self, u: Point) -> f64 {
        self.trig().value(u)
    }
}

fn paper_scale() -> f64 {
    16.0 * PI * PI
}

/// Coefficients of user `k`'s margin in the position of element `(t, n)`.
pub fn surrogate_coeffs(ctx: &PositionContext, layout: &AntennaLayout, t: usize, n: usize, k: usize) -> SurrogateCoeffs {
    let nn = layout.n();
    let e = t * nn + n;
    let link = ctx.ch.link(t, k);
    let b = rx_field_vector(layout.ue[k], &link.rx_dirs);
    let c: CVec = CVec::from_iterator(b.len(), b.iter().zip(&link.gains).map(|(bl, g)| g.conj() * bl));
    let h = stacked_channel(layout, ctx.ch, k);
    let rt = &ctx.r_tilde[k];
    let ree = rt[(e, e)];
    let g = (rt.row(e) * &h)[(0, 0)] - ree * h[e];
    let p = &c * c.adjoint() * ree;
    let q = c.map(|cl| cl.conj() * g);
    let mut coeffs = SurrogateCoeffs { p, q, eps: 0.0, dirs: link.tx_dirs.clone(), delta: 0.0 };
    let u = layout.tx[t][n];
    coeffs.eps = ctx.zeta(layout, k) - coeffs.value(u);
    let f = coeffs.trig();
    let l = coeffs.dirs.len();
    let mut paper = coeffs.q.iter().map(|z| z.norm()).sum::<f64>();
    for i in 0..l {
        for j in i + 1..l {
            paper += coeffs.p[(i, j)].norm();
        }
    }
    coeffs.delta = (paper_scale() * paper).max(f.curvature_bound());
    coeffs
}

/// Coefficients of the sensing objective in the position of element `(t, n)`.
pub fn omega_coeffs(ctx: &PositionContext, layout: &AntennaLayout, t: usize, n: usize) -> SensingCoeffs {
    let nn = layout.n();
    let e = t * nn + n;
    let a = sensing_steering(layout, ctx.ch);
    let c = ctx.weights.scaled_coupling();
    let mut q = C64::new(0.0, 0.0);
    for (j, aj) in a.iter().enumerate() {
        for (i, s) in aj.iter().enumerate() {
            let col = j * nn + i;
            if col != e {
                q += c[(t, j)] * ctx.r[(e, col)] * s;
            }
        }
    }
    let p = (c[(t, t)] * ctx.r[(e, e)]).re;
    let dir = ctx.ch.sensing_dirs[t];
    let mut coeffs = SensingCoeffs { p, q, eps: 0.0, dir, delta: 0.0 };
    coeffs.eps = ctx.omega(layout) - coeffs.value(layout.tx[t][n]);
    coeffs.delta = (paper_scale() * q.norm()).max(coeffs.trig().curvature_bound());
    coeffs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Passes over all elements per call.
    pub passes: usize,
    /// Stop early when one pass raises the objective by less than this
    /// fraction.
    pub tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { passes: 1, tol: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ElementOutcome {
    Moved { rho: f64 },
    Kept,
    Skipped(String),
}

const HALF_PLANE_MARGIN: f64 = 1e-8;
const DEGENERATE: f64 = 1e-12;

/// Updates element `(t, n)` in place. The penalized objective never
/// decreases: a candidate that does not improve it is discarded.
pub fn optimize_element(ctx: &PositionContext, layout: &mut AntennaLayout, t: usize, n: usize) -> ElementOutcome {
    let region = layout.region_tx;
    let (lo, hi) = (region.lo(), region.hi());
    let fixed = [hi[0] - lo[0] <= DEGENERATE, hi[1] - lo[1] <= DEGENERATE];
    if fixed[0] && fixed[1] {
        return ElementOutcome::Kept;
    }
    let u0 = layout.tx[t][n];
    let k_count = ctx.ch.k;
    let users: Vec<(TrigSum, f64)> = (0..k_count)
        .map(|k| {
            let c = surrogate_coeffs(ctx, layout, t, n, k);
            (c.trig(), c.delta)
        })
        .collect();
    let sens = omega_coeffs(ctx, layout, t, n);
    let others: Vec<Point> = layout.tx[t].iter().enumerate().filter(|(i, _)| *i != n).map(|(_, p)| *p).collect();

    // variables: z in SOC(4) with s = z0 - 1 >= |d|^2, d = z[2..4] / 2;
    // then nu, user slacks, box slacks, half-plane slacks, cap slack
    let n_box: usize = fixed.iter().map(|f| if *f { 0 } else { 2 }).sum();
    let n_lin = 1 + k_count + n_box + others.len() + 1;
    let n_vars = 4 + n_lin;
    let box_rows: usize = fixed.iter().map(|f| if *f { 1 } else { 2 }).sum();
    let rows = 1 + k_count + box_rows + others.len() + 1;
    let mut a = DMatrix::zeros(rows, n_vars);
    let mut b = DVector::zeros(rows);
    let nu = 4;
    // slack unit follows the size of the margins
    let unit = users.iter().fold(1.0f64, |m, (f, _)| m.max(f.value(u0).abs()));
    let mut slack = nu + 1;
    let mut row = 0;

    a[(row, 0)] = 1.0;
    a[(row, 1)] = -1.0;
    b[row] = 2.0;
    row += 1;
    for (f, delta) in &users {
        let g = f.gradient(u0);
        a[(row, 0)] = -0.5 * delta;
        a[(row, 2)] = 0.5 * g[0];
        a[(row, 3)] = 0.5 * g[1];
        a[(row, nu)] = unit;
        a[(row, slack)] = -unit;
        b[row] = -f.value(u0) - 0.5 * delta;
        slack += 1;
        row += 1;
    }
    for i in 0..2 {
        if fixed[i] {
            a[(row, 2 + i)] = 1.0;
            b[row] = 2.0 * (lo[i] - u0[i]);
            row += 1;
        } else {
            a[(row, 2 + i)] = 0.5;
            a[(row, slack)] = -1.0;
            b[row] = lo[i] - u0[i];
            slack += 1;
            row += 1;
            a[(row, 2 + i)] = 0.5;
            a[(row, slack)] = 1.0;
            b[row] = hi[i] - u0[i];
            slack += 1;
            row += 1;
        }
    }
    for uj in &others {
        let diff = [u0[0] - uj[0], u0[1] - uj[1]];
        let dist = dot(diff, diff).sqrt();
        let nrm = if dist > DEGENERATE { [diff[0] / dist, diff[1] / dist] } else { [1.0, 0.0] };
        a[(row, 2)] = 0.5 * nrm[0];
        a[(row, 3)] = 0.5 * nrm[1];
        a[(row, slack)] = -1.0;
        b[row] = MIN_SEPARATION + HALF_PLANE_MARGIN - dist;
        slack += 1;
        row += 1;
    }
    // |d|^2 never exceeds the squared region diagonal
    a[(row, 0)] = 1.0;
    a[(row, slack)] = 1.0;
    b[row] = 1.0 + region.width * region.width + region.height * region.height;
    debug_assert_eq!(slack + 1, n_vars);
    debug_assert_eq!(row + 1, rows);

    let g0 = sens.trig().gradient(u0);
    let mut c = DVector::zeros(n_vars);
    c[0] = 0.5 * sens.delta;
    c[2] = -0.5 * g0[0];
    c[3] = -0.5 * g0[1];
    c[nu] = ctx.eta * unit;
    let scale = c.amax();
    if scale > 0.0 {
        c /= scale;
    }

    let cones = vec![Cone::SecondOrder(4), Cone::NonNeg(n_lin)];
    let problem = match ConicProblem::new(c, a, b, cones) {
        Ok(p) => p,
        Err(e) => return ElementOutcome::Skipped(e.to_string()),
    };
    let sol = match solve(&problem, &Settings::default()) {
        Ok(s) => s,
        Err(e) => return skipped(t, n, e.to_string()),
    };
    if !(sol.status == Status::Optimal || sol.within(1e-4)) {
        return skipped(
            t,
            n,
            format!("{:?} (pres {:.1e}, dres {:.1e}, gap {:.1e})", sol.status, sol.primal_residual, sol.dual_residual, sol.gap),
        );
    }
    let cand = region.clip([u0[0] + 0.5 * sol.x[2], u0[1] + 0.5 * sol.x[3]]);
    let too_close = others.iter().any(|p| (cand[0] - p[0]).hypot(cand[1] - p[1]) < MIN_SEPARATION - 1e-9);
    if too_close {
        return ElementOutcome::Kept;
    }
    let before = ctx.rho(layout);
    layout.tx[t][n] = cand;
    let after = ctx.rho(layout);
    if after > before {
        ElementOutcome::Moved { rho: after }
    } else {
        layout.tx[t][n] = u0;
        ElementOutcome::Kept
    }
}

fn skipped(t: usize, n: usize, why: String) -> ElementOutcome {
    warn!("transmit element ({t}, {n}) update skipped: {why}");
    ElementOutcome::Skipped(why)
}

/// Sequential passes over all transmit elements in ascending `(t, n)`.
/// Returns the final penalized objective.
pub fn sweep_all(ctx: &PositionContext, layout: &mut AntennaLayout, cfg: &SweepConfig) -> f64 {
    let mut rho = ctx.rho(layout);
    for pass in 0..cfg.passes {
        let start = rho;
        for t in 0..layout.tx.len() {
            for n in 0..layout.tx[t].len() {
                if let ElementOutcome::Moved { rho: r } = optimize_element(ctx, layout, t, n) {
                    rho = r;
                }
            }
        }
        debug!("transmit sweep pass {pass}: rho {start:.6e} -> {rho:.6e}");
        if rho - start <= cfg.tol * start.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    rho
}

/// Rebuilds `R` from its user and sensing parts.
pub fn total_covariance(r_k: &[CMat], r0: &CMat) -> CMat {
    hermitize(&r_k.iter().fold(r0.clone(), |acc, x| acc + x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_sum_derivatives_at_zero() {
        let f = TrigSum { constant: 1.0, terms: vec![(C64::new(0.0, 1.0), [1.0, 0.0])] };
        // 1 + 2 Re(j e^{j 2 pi x}) = 1 - 2 sin(2 pi x)
        assert!((f.value([0.0, 0.0]) - 1.0).abs() < 1e-15);
        let g = f.gradient([0.0, 0.0]);
        assert!((g[0] + 4.0 * PI).abs() < 1e-12 && g[1] == 0.0);
        assert!((f.curvature_bound() - 8.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn surrogate_touches() {
        let f = TrigSum { constant: 0.3, terms: vec![(C64::new(0.2, -0.7), [0.4, -0.9])] };
        let u0 = [0.1, -0.3];
        assert_eq!(surrogate(&f, 10.0, u0, u0), f.value(u0));
    }
}
