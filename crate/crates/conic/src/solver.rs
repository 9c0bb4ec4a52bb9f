//! Homogeneous self-dual embedding with Mehrotra predictor-corrector steps and
//! Nesterov-Todd scaling.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::cone::{Cone, Scaling};
use crate::embed::{smat, svec_into};
use crate::{ConicError, ConicProblem, ConicSolution, Settings, Status};

struct Scaled {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    /// Row scaling of the equality constraints.
    d: DVector<f64>,
    /// Column scaling, constant on each non-orthant cone.
    e: DVector<f64>,
    b_scale: f64,
    c_scale: f64,
}

fn equilibrate(p: &ConicProblem, offsets: &[usize], rounds: usize) -> Scaled {
    let m = p.num_constraints();
    let n = p.num_vars();
    let mut a = p.a.clone();
    let mut d = DVector::from_element(m, 1.0);
    let mut e = DVector::from_element(n, 1.0);
    let clamp = |v: f64| if v < 1e-8 { 1.0 } else { v.clamp(1e-4, 1e4) };
    for _ in 0..rounds {
        let mut dr = DVector::from_element(m, 1.0);
        for i in 0..m {
            let norm = a.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            dr[i] = 1.0 / clamp(norm).sqrt();
        }
        let mut ec = DVector::from_element(n, 1.0);
        for (cone, &off) in p.cones.iter().zip(offsets) {
            let len = cone.len();
            match cone {
                Cone::NonNeg(_) => {
                    for j in off..off + len {
                        let norm = a.column(j).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                        ec[j] = 1.0 / clamp(norm).sqrt();
                    }
                }
                _ => {
                    let norm = a.columns(off, len).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                    let f = 1.0 / clamp(norm).sqrt();
                    for j in off..off + len {
                        ec[j] = f;
                    }
                }
            }
        }
        for j in 0..n {
            for i in 0..m {
                a[(i, j)] *= dr[i] * ec[j];
            }
        }
        d.component_mul_assign(&dr);
        e.component_mul_assign(&ec);
    }
    let mut b = p.b.component_mul(&d);
    let mut c = p.c.component_mul(&e);
    let b_scale = if b.amax() > 0.0 { b.amax() } else { 1.0 };
    let c_scale = if c.amax() > 0.0 { c.amax() } else { 1.0 };
    b /= b_scale;
    c /= c_scale;
    Scaled { a, b, c, d, e, b_scale, c_scale }
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Metrics {
    pres: f64,
    dres: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
}

impl Metrics {
    fn worst(&self) -> f64 {
        self.pres.max(self.dres).max(self.gap)
    }
}

/// Solve `p`. Infeasibility is reported through [`Status`], never as an error.
pub fn solve(p: &ConicProblem, settings: &Settings) -> Result<ConicSolution, ConicError> {
    let offsets = p.offsets();
    let m = p.num_constraints();
    let n = p.num_vars();
    let degree: usize = p.cones.iter().map(Cone::degree).sum();
    let sc = equilibrate(p, &offsets, settings.equilibrate_iters);
    let a = &sc.a;
    let at = a.transpose();

    let mut it = Iterate {
        x: DVector::zeros(n),
        s: DVector::zeros(n),
        y: DVector::zeros(m),
        tau: 1.0,
        kappa: 1.0,
    };
    for (cone, &off) in p.cones.iter().zip(&offsets) {
        let len = cone.len();
        cone.identity_into(&mut it.x.as_mut_slice()[off..off + len]);
        cone.identity_into(&mut it.s.as_mut_slice()[off..off + len]);
    }

    let nonzero = |v: f64| if v > 0.0 { v } else { 1.0 };
    let b_norm = nonzero(p.b.norm());
    let c_norm = nonzero(p.c.norm());
    let unscale = |it: &Iterate| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x = it.x.component_mul(&sc.e) * (sc.b_scale / it.tau);
        let y = it.y.component_mul(&sc.d) * (sc.c_scale / it.tau);
        let s = it.s.component_div(&sc.e) * (sc.c_scale / it.tau);
        (x, y, s)
    };
    let metrics = |x: &DVector<f64>, y: &DVector<f64>, s: &DVector<f64>| -> Metrics {
        let pres = (&p.a * x - &p.b).norm() / b_norm;
        let dres = (p.a.tr_mul(y) + s - &p.c).norm() / c_norm;
        let pobj = p.c.dot(x);
        let dobj = p.b.dot(y);
        let gap = (pobj - dobj).abs() / pobj.abs().max(dobj.abs()).max(c_norm);
        Metrics { pres, dres, gap, pobj, dobj }
    };

    let finish = |it: &Iterate, status: Status, iterations: usize| -> ConicSolution {
        let (x, y, s) = unscale(it);
        let mt = metrics(&x, &y, &s);
        ConicSolution {
            status,
            x,
            y,
            s,
            primal_objective: mt.pobj,
            dual_objective: mt.dobj,
            primal_residual: mt.pres,
            dual_residual: mt.dres,
            gap: mt.gap,
            iterations,
        }
    };

    let mut best: Option<(f64, Iterate, usize)> = None;
    let mut status = Status::MaxIterations;
    let mut stall = 0usize;
    let mut prev_worst = f64::INFINITY;

    for iter in 0..settings.max_iter {
        let (ux, uy, us) = unscale(&it);
        let mt = metrics(&ux, &uy, &us);
        debug!(
            "iter {iter}: pobj {:.6e} dobj {:.6e} pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e} kappa {:.2e}",
            mt.pobj, mt.dobj, mt.pres, mt.dres, mt.gap, it.tau, it.kappa
        );
        if mt.pres <= settings.tol_feas && mt.dres <= settings.tol_feas && mt.gap <= settings.tol_gap {
            return Ok(finish(&it, Status::Optimal, iter));
        }
        let worst = mt.worst();
        if best.as_ref().is_none_or(|(w, _, _)| worst < *w) {
            best = Some((
                worst,
                Iterate { x: it.x.clone(), s: it.s.clone(), y: it.y.clone(), tau: it.tau, kappa: it.kappa },
                iter,
            ));
        }

        // certificates, in unscaled coordinates but without dividing by tau
        let by = sc.b.dot(&it.y) * sc.b_scale;
        if by > 0.0 {
            let r = (&at * &it.y + &it.s).component_div(&sc.e);
            if r.norm() / by <= settings.tol_infeas {
                let mut cert = finish(&it, Status::PrimalInfeasible, iter);
                cert.y = it.y.component_mul(&sc.d) / by;
                cert.s = it.s.component_div(&sc.e) / by;
                return Ok(cert);
            }
        }
        let cx = sc.c.dot(&it.x) * sc.c_scale;
        if cx < 0.0 {
            let r = (a * &it.x).component_div(&sc.d);
            if r.norm() / (-cx) <= settings.tol_infeas {
                let mut cert = finish(&it, Status::DualInfeasible, iter);
                cert.x = it.x.component_mul(&sc.e) / (-cx);
                return Ok(cert);
            }
        }

        if worst > 0.9 * prev_worst {
            stall += 1;
        } else {
            stall = 0;
        }
        prev_worst = prev_worst.min(worst);
        if stall > 25 {
            status = Status::Stalled;
            break;
        }

        let Some(step) = newton_step(p, &offsets, &sc, &at, &it, degree, settings) else {
            debug!("iter {iter}: step computation failed");
            status = Status::Stalled;
            break;
        };
        let (dx, dy, ds, dtau, dkappa, alpha) = step;
        if alpha < 1e-10 {
            debug!("iter {iter}: step length collapsed");
            status = Status::Stalled;
            break;
        }
        it.x += &dx * alpha;
        it.y += &dy * alpha;
        it.s += &ds * alpha;
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;

        // keep the embedding well scaled
        let norm = (it.x.norm_squared() + it.s.norm_squared() + it.tau * it.tau + it.kappa * it.kappa).sqrt();
        if norm > 1e8 || norm < 1e-8 {
            let f = 1.0 / norm;
            it.x *= f;
            it.y *= f;
            it.s *= f;
            it.tau *= f;
            it.kappa *= f;
        }
    }

    let (_, b_it, b_iter) = best.expect("at least one iterate");
    Ok(finish(&b_it, status, b_iter))
}

type Step = (DVector<f64>, DVector<f64>, DVector<f64>, f64, f64, f64);

fn newton_step(
    p: &ConicProblem,
    offsets: &[usize],
    sc: &Scaled,
    at: &DMatrix<f64>,
    it: &Iterate,
    degree: usize,
    settings: &Settings,
) -> Option<Step> {
    let a = &sc.a;
    let m = a.nrows();
    let n = a.ncols();
    let scalings: Vec<Scaling> = p
        .cones
        .iter()
        .zip(offsets)
        .map(|(cone, &off)| {
            let r = off..off + cone.len();
            Scaling::compute(cone, &it.x.as_slice()[r.clone()], &it.s.as_slice()[r])
        })
        .collect::<Option<_>>()?;
    let mut lambda = DVector::zeros(n);
    for ((sc_k, cone), &off) in scalings.iter().zip(&p.cones).zip(offsets) {
        let r = off..off + cone.len();
        sc_k.lambda(&it.x.as_slice()[r.clone()], &mut lambda.as_mut_slice()[r]);
    }
    let mu = (it.x.dot(&it.s) + it.tau * it.kappa) / (degree as f64 + 1.0);

    // H A' column by column, then the Schur complement
    let mut hat = DMatrix::zeros(n, m);
    for ((sc_k, cone), &off) in scalings.iter().zip(&p.cones).zip(offsets) {
        let len = cone.len();
        for i in 0..m {
            let row: Vec<f64> = (off..off + len).map(|j| a[(i, j)]).collect();
            if row.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut out = vec![0.0; len];
            apply_h_fast(sc_k, &row, &mut out);
            for (j, v) in out.into_iter().enumerate() {
                hat[(off + j, i)] = v;
            }
        }
    }
    let mut schur = a * &hat;
    schur = (&schur + schur.transpose()) * 0.5;
    let chol = factor(&schur)?;

    let apply = |f: &dyn Fn(&Scaling, &[f64], &mut [f64]), v: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for ((sc_k, cone), &off) in scalings.iter().zip(&p.cones).zip(offsets) {
            let r = off..off + cone.len();
            f(sc_k, &v.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    };
    let h = |v: &DVector<f64>| apply(&|s, x, o| apply_h_fast(s, x, o), v);

    let r_p = a * &it.x - &sc.b * it.tau;
    let r_d = at * &it.y + &it.s - &sc.c * it.tau;
    let r_g = sc.c.dot(&it.x) - sc.b.dot(&it.y) + it.kappa;

    let hc = h(&sc.c);
    let rhs_p = a * &hc + &sc.b;
    let p_vec = chol.solve(&rhs_p);
    let v1 = at * &p_vec - &sc.c;
    let dx1 = h(&v1);
    // equals c'dx1 - b'p - kappa/tau, written without cancellation
    let denom = -apply(&|s, x, o| s.apply_inv_t(x, o), &v1).norm_squared() - it.kappa / it.tau;

    // Linear system in (dx, dy, dtau):
    //   A dx - b dtau = r1
    //   W'W dx - A'dy + c dtau = r2
    //   c'dx - b'dy - (kappa/tau) dtau = r3
    let raw = |r1: &DVector<f64>, r2: &DVector<f64>, r3: f64| -> (DVector<f64>, DVector<f64>, f64) {
        let q = chol.solve(&(r1 - a * h(r2)));
        let dx2 = h(&(at * &q + r2));
        let dtau = (r3 - sc.c.dot(&dx2) + sc.b.dot(&q)) / denom;
        (&dx1 * dtau + dx2, &p_vec * dtau + q, dtau)
    };
    let wtw = |v: &DVector<f64>| {
        let wv = apply(&|s, x, o| s.apply(x, o), v);
        apply(&|s, x, o| s.apply_t(x, o), &wv)
    };
    let solve_with = |eta: f64, r_c: &DVector<f64>, r_tau: f64| -> (DVector<f64>, DVector<f64>, DVector<f64>, f64, f64) {
        let r1 = -(&r_p * eta);
        let r2 = &r_d * eta + apply(&|s, x, o| s.apply_t(x, o), r_c);
        let r3 = -eta * r_g - r_tau / it.tau;
        let (mut dx, mut dy, mut dtau) = raw(&r1, &r2, r3);
        for _ in 0..3 {
            let e1 = &r1 - (a * &dx - &sc.b * dtau);
            let e2 = &r2 - (wtw(&dx) - at * &dy + &sc.c * dtau);
            let e3 = r3 - (sc.c.dot(&dx) - sc.b.dot(&dy) - it.kappa / it.tau * dtau);
            let size = r1.amax().max(r2.amax()).max(r3.abs()).max(1e-300);
            if e1.amax().max(e2.amax()).max(e3.abs()) <= 1e-14 * size {
                break;
            }
            let (cx, cy, ct) = raw(&e1, &e2, e3);
            dx += cx;
            dy += cy;
            dtau += ct;
        }
        let ds = -(&r_d * eta) - at * &dy + &sc.c * dtau;
        let dkappa = (r_tau - it.kappa * dtau) / it.tau;
        (dx, dy, ds, dtau, dkappa)
    };

    let max_step = |dx: &DVector<f64>, ds: &DVector<f64>, dtau: f64, dkappa: f64| -> f64 {
        let mut alpha = f64::INFINITY;
        for (cone, &off) in p.cones.iter().zip(offsets) {
            let r = off..off + cone.len();
            alpha = alpha.min(cone.max_step(&it.x.as_slice()[r.clone()], &dx.as_slice()[r.clone()]));
            alpha = alpha.min(cone.max_step(&it.s.as_slice()[r.clone()], &ds.as_slice()[r]));
        }
        if dtau < 0.0 {
            alpha = alpha.min(-it.tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-it.kappa / dkappa);
        }
        alpha
    };

    // predictor
    let r_c_aff = -&lambda;
    let (dxa, _dya, dsa, dtaua, dkappaa) = solve_with(1.0, &r_c_aff, -it.tau * it.kappa);
    let alpha_aff = max_step(&dxa, &dsa, dtaua, dkappaa).min(1.0);
    let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

    // corrector
    let wdx = apply(&|s, x, o| s.apply(x, o), &dxa);
    let wds = apply(&|s, x, o| s.apply_inv_t(x, o), &dsa);
    let mut r_c = DVector::zeros(n);
    for ((sc_k, cone), &off) in scalings.iter().zip(&p.cones).zip(offsets) {
        let len = cone.len();
        let r = off..off + len;
        let lam = &lambda.as_slice()[r.clone()];
        let mut ll = vec![0.0; len];
        cone.product(lam, lam, &mut ll);
        let mut corr = vec![0.0; len];
        cone.product(&wdx.as_slice()[r.clone()], &wds.as_slice()[r.clone()], &mut corr);
        let mut e = vec![0.0; len];
        cone.identity_into(&mut e);
        let target: Vec<f64> = (0..len).map(|i| sigma * mu * e[i] - ll[i] - corr[i]).collect();
        cone.inverse_product(lam, sc_k.lam_diag(), &target, &mut r_c.as_mut_slice()[r]);
    }
    let r_tau = sigma * mu - it.tau * it.kappa - dtaua * dkappaa;
    let (dx, dy, ds, dtau, dkappa) = solve_with(1.0 - sigma, &r_c, r_tau);
    let alpha = (settings.step_fraction * max_step(&dx, &ds, dtau, dkappa)).min(1.0);
    if !alpha.is_finite() || dx.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((dx, dy, ds, dtau, dkappa, alpha))
}

/// `(W'W)^{-1} v` with the semidefinite case done via two products.
fn apply_h_fast(sc: &Scaling, v: &[f64], out: &mut [f64]) {
    match sc.psd_factor() {
        Some(f) => {
            let y = smat(v);
            svec_into(&(f * y * f), out);
        }
        None => sc.apply_h(v, out),
    }
}

struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Factor {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

fn factor(m: &DMatrix<f64>) -> Option<Factor> {
    let dim = m.nrows();
    if dim == 0 {
        return nalgebra::Cholesky::new(DMatrix::<f64>::zeros(0, 0)).map(|chol| Factor { chol });
    }
    let scale = (0..dim).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut mm = m.clone();
        for i in 0..dim {
            mm[(i, i)] += reg;
        }
        if let Some(chol) = nalgebra::Cholesky::new(mm) {
            return Some(Factor { chol });
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}
