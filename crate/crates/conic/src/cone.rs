//! Symmetric cones, their Jordan algebra, and Nesterov-Todd scalings.

use nalgebra::{DMatrix, DVector};

use crate::embed::{smat, svec_into, svec_len};

/// One factor of the product cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    /// `dim` independent nonnegative variables.
    NonNeg(usize),
    /// `x0 >= ||x[1..]||`, `dim` entries including the head.
    SecondOrder(usize),
    /// Real symmetric `n x n` positive semidefinite matrix, stored as `svec`.
    Psd(usize),
}

impl Cone {
    /// Number of scalar entries the cone occupies in a variable vector.
    pub fn len(&self) -> usize {
        match *self {
            Cone::NonNeg(d) | Cone::SecondOrder(d) => d,
            Cone::Psd(n) => svec_len(n),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(d) => d,
            Cone::SecondOrder(_) => 1,
            Cone::Psd(n) => n,
        }
    }

    pub(crate) fn identity_into(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match *self {
            Cone::NonNeg(_) => out.iter_mut().for_each(|v| *v = 1.0),
            Cone::SecondOrder(_) => out[0] = 1.0,
            Cone::Psd(n) => {
                let mut k = 0;
                for j in 0..n {
                    out[k] = 1.0;
                    k += n - j;
                }
            }
        }
    }

    /// Jordan product `a o b`.
    pub(crate) fn product(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        match *self {
            Cone::NonNeg(_) => {
                for i in 0..a.len() {
                    out[i] = a[i] * b[i];
                }
            }
            Cone::SecondOrder(_) => {
                out[0] = dot(a, b);
                for i in 1..a.len() {
                    out[i] = a[0] * b[i] + b[0] * a[i];
                }
            }
            Cone::Psd(_) => {
                let ma = smat(a);
                let mb = smat(b);
                let p = (&ma * &mb + &mb * &ma) * 0.5;
                svec_into(&p, out);
            }
        }
    }

    /// Solve `lambda o u = r` for `u`, where `lambda` is the scaled point.
    /// For the semidefinite cone `lambda` is diagonal, given as `lam_diag`.
    pub(crate) fn inverse_product(&self, lambda: &[f64], lam_diag: Option<&[f64]>, r: &[f64], out: &mut [f64]) {
        match *self {
            Cone::NonNeg(_) => {
                for i in 0..r.len() {
                    out[i] = r[i] / lambda[i];
                }
            }
            Cone::SecondOrder(_) => {
                let l0 = lambda[0];
                let l1r1 = dot(&lambda[1..], &r[1..]);
                let det = soc_det(lambda);
                let u0 = (l0 * r[0] - l1r1) / det;
                out[0] = u0;
                for i in 1..r.len() {
                    out[i] = (r[i] - u0 * lambda[i]) / l0;
                }
            }
            Cone::Psd(n) => {
                let lam = lam_diag.expect("diagonal scaled point");
                let mr = smat(r);
                let u = DMatrix::from_fn(n, n, |i, j| 2.0 * mr[(i, j)] / (lam[i] + lam[j]));
                svec_into(&u, out);
            }
        }
    }

    /// Largest `alpha` (possibly infinite) keeping `x + alpha d` in the cone.
    /// `x` must be interior.
    pub(crate) fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        match *self {
            Cone::NonNeg(_) => {
                let mut alpha = f64::INFINITY;
                for i in 0..x.len() {
                    if d[i] < 0.0 {
                        alpha = alpha.min(-x[i] / d[i]);
                    }
                }
                alpha
            }
            Cone::SecondOrder(_) => soc_max_step(x, d),
            Cone::Psd(_) => {
                let mx = smat(x);
                let md = smat(d);
                let Some(chol) = mx.cholesky() else {
                    return 0.0;
                };
                let l = chol.l();
                let Some(t) = l.solve_lower_triangular(&md) else {
                    return 0.0;
                };
                let Some(m) = l.solve_lower_triangular(&t.transpose()) else {
                    return 0.0;
                };
                let m = (&m + m.transpose()) * 0.5;
                let min = m.symmetric_eigenvalues().min();
                if min < 0.0 {
                    -1.0 / min
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// True when `x` lies strictly inside the cone.
    pub fn is_interior(&self, x: &[f64]) -> bool {
        match *self {
            Cone::NonNeg(_) => x.iter().all(|&v| v > 0.0),
            Cone::SecondOrder(_) => x[0] > 0.0 && soc_det(x) > 0.0,
            Cone::Psd(_) => smat(x).cholesky().is_some(),
        }
    }

    /// Smallest "eigenvalue" of `x` in the Jordan-algebra sense; negative means
    /// outside the cone.
    pub fn min_eigenvalue(&self, x: &[f64]) -> f64 {
        match *self {
            Cone::NonNeg(_) => x.iter().copied().fold(f64::INFINITY, f64::min),
            Cone::SecondOrder(_) => x[0] - dot(&x[1..], &x[1..]).sqrt(),
            Cone::Psd(_) => smat(x).symmetric_eigenvalues().min(),
        }
    }
}

fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let b = 2.0 * (x[0] * d[0] - dot(&x[1..], &d[1..]));
    let c = soc_det(x);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -x[0] / d[0];
    }
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return alpha;
    }
    if a.abs() <= 1e-15 * scale {
        if b < 0.0 {
            alpha = alpha.min(-c / b);
        }
        return alpha;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return alpha;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    roots.sort_by(f64::total_cmp);
    for r in roots {
        if r > 0.0 {
            alpha = alpha.min(r);
            break;
        }
    }
    alpha
}

/// `x0^2 - ||x1||^2` in factored form, accurate near the boundary.
fn soc_det(x: &[f64]) -> f64 {
    let r = dot(&x[1..], &x[1..]).sqrt();
    (x[0] - r) * (x[0] + r)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nesterov-Todd scaling `W` of one cone at the pair `(x, s)`, satisfying
/// `W x = W^{-T} s = lambda`.
#[derive(Clone, Debug)]
pub(crate) enum Scaling {
    NonNeg {
        w: Vec<f64>,
    },
    SecondOrder {
        w: DMatrix<f64>,
        w_inv: DMatrix<f64>,
    },
    Psd {
        /// `W(X) = G^T X G`.
        g: DMatrix<f64>,
        g_inv: DMatrix<f64>,
        /// `(W^T W)^{-1}(Y) = F Y F`.
        f: DMatrix<f64>,
        lam: Vec<f64>,
    },
}

impl Scaling {
    pub(crate) fn compute(cone: &Cone, x: &[f64], s: &[f64]) -> Option<Scaling> {
        match *cone {
            Cone::NonNeg(_) => Some(Scaling::NonNeg {
                w: x.iter().zip(s).map(|(a, b)| (b / a).sqrt()).collect(),
            }),
            Cone::SecondOrder(_) => {
                let xjx = soc_det(x);
                let sjs = soc_det(s);
                if xjx <= 0.0 || sjs <= 0.0 {
                    return None;
                }
                let beta = (sjs / xjx).powf(0.25);
                let nx = xjx.sqrt();
                let ns = sjs.sqrt();
                let xb: Vec<f64> = x.iter().map(|v| v / nx).collect();
                let sb: Vec<f64> = s.iter().map(|v| v / ns).collect();
                let gamma = ((1.0 + dot(&xb, &sb)) / 2.0).sqrt();
                // w = (s_bar + J x_bar) / (2 gamma)
                let mut wb: Vec<f64> = sb.iter().zip(&xb).map(|(a, b)| -(a - b)).collect();
                wb[0] = sb[0] + xb[0];
                for (i, v) in wb.iter_mut().enumerate().skip(1) {
                    *v = sb[i] - xb[i];
                }
                wb.iter_mut().for_each(|v| *v /= 2.0 * gamma);
                let denom = (2.0 * (wb[0] + 1.0)).sqrt();
                let mut v = wb.clone();
                v[0] += 1.0;
                v.iter_mut().for_each(|e| *e /= denom);
                let n = x.len();
                let vv = DVector::from_column_slice(&v);
                let mut jv = vv.clone();
                for i in 1..n {
                    jv[i] = -jv[i];
                }
                let jmat = DMatrix::from_fn(n, n, |i, j| if i != j { 0.0 } else if i == 0 { 1.0 } else { -1.0 });
                let w = (&vv * vv.transpose() * 2.0 - &jmat) * beta;
                let w_inv = (&jv * jv.transpose() * 2.0 - &jmat) / beta;
                Some(Scaling::SecondOrder { w, w_inv })
            }
            Cone::Psd(_) => {
                let lx = smat(x).cholesky()?.l();
                let ls = smat(s).cholesky()?.l();
                let m = ls.transpose() * &lx;
                let svd = m.svd(true, true);
                let v = svd.v_t?.transpose();
                let lam: Vec<f64> = svd.singular_values.iter().copied().collect();
                if lam.iter().any(|&l| !(l > 0.0)) {
                    return None;
                }
                let n = lam.len();
                let sqrt_lam = DMatrix::from_fn(n, n, |i, j| if i == j { lam[i].sqrt() } else { 0.0 });
                let inv_sqrt_lam = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / lam[i].sqrt() } else { 0.0 });
                // G = Lx^{-T} V Lam^{1/2}
                let lxt = lx.transpose();
                let vs = &v * &sqrt_lam;
                let g = lxt.solve_upper_triangular(&vs)?;
                let g_inv = &inv_sqrt_lam * v.transpose() * &lxt;
                let half = &lx * &v * &inv_sqrt_lam;
                let f = &half * half.transpose();
                Some(Scaling::Psd { g, g_inv, f, lam })
            }
        }
    }

    /// The scaled point `lambda = W x` in vector form.
    pub(crate) fn lambda(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { w } => {
                for i in 0..x.len() {
                    out[i] = w[i] * x[i];
                }
            }
            Scaling::SecondOrder { w, .. } => mat_vec(w, x, out),
            Scaling::Psd { lam, .. } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let n = lam.len();
                let mut k = 0;
                for (j, l) in lam.iter().enumerate() {
                    out[k] = *l;
                    k += n - j;
                }
            }
        }
    }

    pub(crate) fn lam_diag(&self) -> Option<&[f64]> {
        match self {
            Scaling::Psd { lam, .. } => Some(lam),
            _ => None,
        }
    }

    /// `W v`.
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = w[i] * v[i];
                }
            }
            Scaling::SecondOrder { w, .. } => mat_vec(w, v, out),
            Scaling::Psd { g, .. } => svec_into(&(g.transpose() * smat(v) * g), out),
        }
    }

    /// `W^T v`.
    pub(crate) fn apply_t(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Psd { g, .. } => svec_into(&(g * smat(v) * g.transpose()), out),
            _ => self.apply(v, out),
        }
    }

    /// `W^{-T} v`.
    pub(crate) fn apply_inv_t(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = v[i] / w[i];
                }
            }
            Scaling::SecondOrder { w_inv, .. } => mat_vec(w_inv, v, out),
            Scaling::Psd { g_inv, .. } => svec_into(&(g_inv * smat(v) * g_inv.transpose()), out),
        }
    }

    /// `(W^T W)^{-1} v`.
    pub(crate) fn apply_h(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = v[i] / (w[i] * w[i]);
                }
            }
            Scaling::SecondOrder { w_inv, .. } => {
                let mut tmp = vec![0.0; v.len()];
                mat_vec(w_inv, v, &mut tmp);
                mat_vec(w_inv, &tmp, out);
            }
            Scaling::Psd { f, .. } => svec_into(&(f * smat(v) * f), out),
        }
    }

    /// `(W^T W)^{-1}` applied to a symmetric matrix, for Schur assembly.
    pub(crate) fn psd_factor(&self) -> Option<&DMatrix<f64>> {
        match self {
            Scaling::Psd { f, .. } => Some(f),
            _ => None,
        }
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += m[(i, j)] * v[j];
        }
        out[i] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::svec;

    fn check_scaling(cone: Cone, x: &[f64], s: &[f64]) {
        let sc = Scaling::compute(&cone, x, s).expect("interior pair");
        let n = x.len();
        let mut wx = vec![0.0; n];
        let mut ws = vec![0.0; n];
        let mut lam = vec![0.0; n];
        sc.apply(x, &mut wx);
        sc.apply_inv_t(s, &mut ws);
        sc.lambda(x, &mut lam);
        for i in 0..n {
            assert!((wx[i] - ws[i]).abs() < 1e-10 * (1.0 + wx[i].abs()), "{cone:?}: W x != W^-T s at {i}: {wx:?} vs {ws:?}");
            assert!((wx[i] - lam[i]).abs() < 1e-10 * (1.0 + wx[i].abs()), "{cone:?}: lambda mismatch");
        }
        // (W^T W)^{-1} (W^T W) v = v
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        sc.apply(&v, &mut a);
        sc.apply_t(&a, &mut b);
        sc.apply_h(&b, &mut c);
        for i in 0..n {
            assert!((c[i] - v[i]).abs() < 1e-9, "{cone:?}: H inverse mismatch");
        }
    }

    #[test]
    fn nt_scaling_soc() {
        check_scaling(Cone::SecondOrder(4), &[3.0, 1.0, -0.5, 0.7], &[2.0, -0.3, 0.9, 0.1]);
        check_scaling(Cone::SecondOrder(3), &[1.0, 0.0, 0.0], &[5.0, 1.0, 2.0]);
    }

    #[test]
    fn nt_scaling_psd() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -0.4, 0.0, -0.4, 3.0, 0.5, 0.0, 0.5, 0.7]);
        check_scaling(Cone::Psd(3), svec(&a).as_slice(), svec(&b).as_slice());
    }

    #[test]
    fn nt_scaling_nonneg() {
        check_scaling(Cone::NonNeg(3), &[1.0, 2.0, 0.5], &[0.1, 4.0, 2.0]);
    }

    #[test]
    fn inverse_product_inverts_product() {
        let cone = Cone::SecondOrder(4);
        let lam = [2.0, 0.5, -0.3, 0.4];
        let u = [0.3, 1.0, -2.0, 0.5];
        let mut r = [0.0; 4];
        cone.product(&lam, &u, &mut r);
        let mut back = [0.0; 4];
        cone.inverse_product(&lam, None, &r, &mut back);
        for i in 0..4 {
            assert!((back[i] - u[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let x = [2.0, 0.0, 0.0];
        let d = [0.0, 1.0, 0.0];
        let a = soc_max_step(&x, &d);
        assert!((a - 2.0).abs() < 1e-12);
        let d = [1.0, 0.5, 0.0];
        assert!(soc_max_step(&x, &d).is_infinite());
    }

    #[test]
    fn psd_step_hits_boundary() {
        let x = svec(&DMatrix::identity(2, 2));
        let d = svec(&DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]));
        let a = Cone::Psd(2).max_step(x.as_slice(), d.as_slice());
        assert!((a - 0.5).abs() < 1e-12);
    }
}
