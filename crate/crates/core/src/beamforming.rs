//! Relaxed covariance design for fixed antenna positions and the rank-one
//! reconstruction of user beamformers.
//!
//! With `R = R_0 + sum_k R_k` the relaxation reads
//!
//! ```text
//! maximize    omega(R) - eta nu
//! subject to  zeta_k(R_k, R) / sigma_k^2 + nu >= 0      every user k
//!             tr(E_t R E_t^H) <= P_t                     every transmitter t
//!             R_0, R_1, ..., R_K PSD,  nu >= 0
//! ```
//!
//! Parametrizing by `R_0` instead of `R` keeps `R - sum_k R_k` positive
//! semidefinite, so the sensing covariance left after extraction is valid.

use conic::embed::{hermitian_coeff_into, hermitian_part, smat, svec_len};
use conic::{solve, Cone, ConicProblem, Settings, Status};
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::physics::{hermitize, omega, quad, sinr, tx_powers};
use crate::{CMat, CVec, Error, C64};

/// Data of one beamforming subproblem.
#[derive(Clone, Copy, Debug)]
pub struct BeamformingInput<'a> {
    /// Stacked channels `h_k`, each of length `N M_t`.
    pub channels: &'a [CVec],
    /// Sensing objective matrix, `omega(R) = Re tr(Q R)`.
    pub q: &'a CMat,
    pub gamma: &'a [f64],
    pub noise: &'a [f64],
    pub p_t: f64,
    pub n: usize,
    pub m_t: usize,
}

impl BeamformingInput<'_> {
    pub fn dim(&self) -> usize {
        self.n * self.m_t
    }

    pub fn users(&self) -> usize {
        self.channels.len()
    }

    /// Sensing objective of an equal split of the budget over all elements.
    pub fn uniform_omega(&self) -> f64 {
        let r = CMat::identity(self.dim(), self.dim()) * C64::new(self.p_t / self.n as f64, 0.0);
        omega(self.q, &r)
    }

    /// `zeta_k / sigma_k^2` for every user.
    pub fn normalized_zeta(&self, r_k: &[CMat], r: &CMat) -> Vec<f64> {
        self.channels
            .iter()
            .zip(r_k)
            .enumerate()
            .map(|(k, (h, rk))| {
                let g = self.gamma[k];
                ((1.0 + g) * quad(h, rk) - g * quad(h, r)) / self.noise[k] - g
            })
            .collect()
    }

    /// Smallest penalty slack that makes `(r_k, r)` satisfy every constraint.
    pub fn required_nu(&self, r_k: &[CMat], r: &CMat) -> f64 {
        self.normalized_zeta(r_k, r).into_iter().fold(0.0, |m, z| m.max(-z))
    }
}

#[derive(Clone, Debug)]
pub struct RelaxedSolution {
    pub r_k: Vec<CMat>,
    pub r0: CMat,
    pub r: CMat,
    pub nu: f64,
    pub omega: f64,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct Extracted {
    pub w: Vec<CVec>,
    /// `w_k w_k^H`.
    pub r_k: Vec<CMat>,
    pub r0: CMat,
    pub r: CMat,
    pub beams: Vec<(f64, CVec)>,
}

#[derive(Clone, Debug)]
pub struct BeamformingResult {
    pub relaxed: RelaxedSolution,
    pub extracted: Extracted,
    pub omega: f64,
    /// `zeta_k / sigma_k^2` of the extracted solution.
    pub zeta: Vec<f64>,
    pub nu: f64,
    pub eta: f64,
}

/// Unit of the slack variables inside the conic problem; margins scale with
/// the SINR targets.
fn slack_scale(input: &BeamformingInput) -> f64 {
    input.gamma.iter().fold(1.0f64, |m, g| m.max(*g))
}

enum Objective {
    Penalized(f64),
    SlackOnly,
}

fn build(input: &BeamformingInput, objective: Objective) -> Result<ConicProblem, Error> {
    let dim = input.dim();
    let k_count = input.users();
    if input.channels.iter().any(|h| h.len() != dim) || input.q.nrows() != dim {
        return Err(Error::Dimension(format!("channels and objective must have length {dim}")));
    }
    if input.gamma.len() != k_count || input.noise.len() != k_count {
        return Err(Error::Dimension("one SINR target and noise power per user".into()));
    }
    let sv = svec_len(2 * dim);
    let n_psd = k_count + 1;
    let n_lin = 1 + k_count + input.m_t;
    let n_vars = n_psd * sv + n_lin;
    let rows = k_count + input.m_t;
    let nu_col = n_psd * sv;

    let mut a = DMatrix::zeros(rows, n_vars);
    let mut b = DVector::zeros(rows);
    let mut coeff = vec![0.0; sv];
    // users occupy PSD blocks 0..K, the sensing covariance block K
    for k in 0..k_count {
        let h = &input.channels[k];
        let g = h * h.adjoint() * C64::new(input.p_t / input.noise[k], 0.0);
        hermitian_coeff_into(&g, &mut coeff);
        let gamma = input.gamma[k];
        for blk in 0..n_psd {
            let f = if blk == k { 1.0 } else { -gamma };
            for (i, c) in coeff.iter().enumerate() {
                a[(k, blk * sv + i)] = f * c;
            }
        }
        a[(k, nu_col)] = slack_scale(input);
        a[(k, nu_col + 1 + k)] = -slack_scale(input);
        b[k] = gamma;
    }
    for t in 0..input.m_t {
        let mut sel = CMat::zeros(dim, dim);
        for i in 0..input.n {
            sel[(t * input.n + i, t * input.n + i)] = C64::new(1.0, 0.0);
        }
        hermitian_coeff_into(&sel, &mut coeff);
        let row = k_count + t;
        for blk in 0..n_psd {
            for (i, c) in coeff.iter().enumerate() {
                a[(row, blk * sv + i)] = *c;
            }
        }
        a[(row, nu_col + 1 + k_count + t)] = 1.0;
        b[row] = 1.0;
    }

    let mut c = DVector::zeros(n_vars);
    match objective {
        Objective::Penalized(eta) => {
            let scale = match input.uniform_omega() {
                w if w > 0.0 => w,
                _ => 1.0,
            };
            let qs = input.q * C64::new(-input.p_t / scale, 0.0);
            hermitian_coeff_into(&hermitize(&qs), &mut coeff);
            for blk in 0..n_psd {
                c.as_mut_slice()[blk * sv..(blk + 1) * sv].copy_from_slice(&coeff);
            }
            c[nu_col] = eta * slack_scale(input) / scale;
        }
        Objective::SlackOnly => c[nu_col] = 1.0,
    }
    let mut cones = vec![Cone::Psd(2 * dim); n_psd];
    cones.push(Cone::NonNeg(n_lin));
    Ok(ConicProblem::new(c, a, b, cones)?)
}

fn run(p: &ConicProblem) -> Result<conic::ConicSolution, Error> {
    let sol = solve(p, &Settings::default())?;
    match sol.status {
        Status::Optimal => Ok(sol),
        Status::MaxIterations | Status::Stalled if sol.within(1e-6) => {
            warn!("beamforming solve ended {:?} with residuals {:.1e}/{:.1e}", sol.status, sol.primal_residual, sol.dual_residual);
            Ok(sol)
        }
        s => Err(Error::SolverFailed(format!(
            "beamforming relaxation {s:?} (pres {:.1e}, dres {:.1e}, gap {:.1e})",
            sol.primal_residual, sol.dual_residual, sol.gap
        ))),
    }
}

/// Solves the relaxation with penalty `eta` on the slack.
pub fn solve_relaxed(input: &BeamformingInput, eta: f64) -> Result<RelaxedSolution, Error> {
    let p = build(input, Objective::Penalized(eta))?;
    let sol = run(&p)?;
    debug!("beamforming solved in {} iterations, gap {:.2e}", sol.iterations, sol.gap);
    let blocks: Vec<CMat> = (0..=input.users())
        .map(|i| hermitize(&(hermitian_part(&smat(sol.block(&p, i))) * C64::new(input.p_t, 0.0))))
        .collect();
    let (r_k, r0) = (blocks[..input.users()].to_vec(), blocks[input.users()].clone());
    let r = r_k.iter().fold(r0.clone(), |acc, x| acc + x);
    let nu = input.required_nu(&r_k, &r);
    let om = omega(input.q, &r);
    Ok(RelaxedSolution { r_k, r0, r, nu, omega: om, status: sol.status })
}

/// Smallest constraint slack achievable at these channels, ignoring sensing.
/// Zero (to solver accuracy) exactly when every SINR target is attainable.
pub fn min_slack(input: &BeamformingInput) -> Result<f64, Error> {
    if input.users() == 0 {
        return Ok(0.0);
    }
    let p = build(input, Objective::SlackOnly)?;
    let sol = run(&p)?;
    Ok(slack_scale(input) * sol.x[(input.users() + 1) * svec_len(2 * input.dim())].max(0.0))
}

/// Rank-one user beamformers `w_k = R_k h_k / sqrt(h_k^H R_k h_k)` with the
/// remainder of `R` assigned to sensing. Received useful power, interference
/// and per-transmitter power are unchanged.
pub fn extract_rank1(r_k: &[CMat], r: &CMat, channels: &[CVec], gamma: &[f64]) -> Result<Extracted, Error> {
    let dim = r.nrows();
    let scale = r.trace().re.abs().max(f64::MIN_POSITIVE);
    let mut w = Vec::with_capacity(r_k.len());
    for (k, (rk, h)) in r_k.iter().zip(channels).enumerate() {
        let v = rk * h;
        let g = h.dotc(&v).re;
        if g <= 1e-14 * scale * h.norm_squared() {
            if gamma[k] > 0.0 {
                return Err(Error::DegenerateExtraction { ue: k });
            }
            w.push(CVec::zeros(dim));
        } else {
            w.push(v / C64::new(g.sqrt(), 0.0));
        }
    }
    let rk1: Vec<CMat> = w.iter().map(|x| x * x.adjoint()).collect();
    let r0 = hermitize(&rk1.iter().fold(r.clone(), |acc, x| acc - x));
    let beams = sensing_beams(&r0);
    Ok(Extracted { w, r_k: rk1, r0, r: r.clone(), beams })
}

/// Eigen-beams of a sensing covariance, dropping those below `1e-9` of the
/// trace. Negative eigenvalues from round-off are discarded.
pub fn sensing_beams(r0: &CMat) -> Vec<(f64, CVec)> {
    let tr = r0.trace().re;
    if !(tr > 0.0) {
        return Vec::new();
    }
    let eig = r0.clone().symmetric_eigen();
    let mut beams: Vec<(f64, CVec)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 1e-9 * tr)
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).into_owned()))
        .collect();
    beams.sort_by(|a, b| b.0.total_cmp(&a.0));
    beams
}

/// Solves the relaxation and reconstructs beamformers.
pub fn solve_beamforming(input: &BeamformingInput, eta: f64) -> Result<BeamformingResult, Error> {
    let relaxed = solve_relaxed(input, eta)?;
    let extracted = extract_rank1(&relaxed.r_k, &relaxed.r, input.channels, input.gamma)?;
    let zeta = input.normalized_zeta(&extracted.r_k, &extracted.r);
    let nu = zeta.iter().fold(0.0f64, |m, z| m.max(-z));
    let om = omega(input.q, &extracted.r);
    Ok(BeamformingResult { relaxed, extracted, omega: om, zeta, nu, eta })
}

/// SINR of every user under covariances `(r_k, r)`.
pub fn sinrs(input: &BeamformingInput, r_k: &[CMat], r: &CMat) -> Vec<f64> {
    input.channels.iter().zip(r_k).zip(input.noise).map(|((h, rk), s)| sinr(h, rk, r, *s)).collect()
}

/// Per-transmitter powers of a covariance.
pub fn powers(input: &BeamformingInput, r: &CMat) -> Vec<f64> {
    tx_powers(r, input.n)
}
