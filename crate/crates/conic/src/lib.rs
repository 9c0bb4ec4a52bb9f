//! A small dense primal-dual interior-point solver for linear objectives over
//! products of nonnegative orthants, second-order cones and real symmetric
//! positive semidefinite cones.
//!
//! Problems are posed in standard form
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b,  x in K
//! ```
//!
//! with dual `maximize b'y s.t. A'y + s = c, s in K`. Complex Hermitian
//! blocks are handled through the real embedding in [`embed`].

pub mod cone;
pub mod embed;
mod solver;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use cone::Cone;
pub use solver::solve;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Debug)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>, cones: Vec<Cone>) -> Result<Self, ConicError> {
        let n: usize = cones.iter().map(Cone::len).sum();
        if c.len() != n {
            return Err(ConicError::Dimension(format!("objective has {} entries, cones cover {n}", c.len())));
        }
        if a.ncols() != n {
            return Err(ConicError::Dimension(format!("constraint matrix has {} columns, cones cover {n}", a.ncols())));
        }
        if a.nrows() != b.len() {
            return Err(ConicError::Dimension(format!("constraint matrix has {} rows, rhs has {}", a.nrows(), b.len())));
        }
        if let Some(bad) = cones.iter().find(|k| k.is_empty()) {
            return Err(ConicError::Dimension(format!("empty cone {bad:?}")));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("objective"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("constraint matrix"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("right-hand side"));
        }
        Ok(ConicProblem { c, a, b, cones })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    /// Start offset of every cone inside the variable vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cones.len());
        let mut k = 0;
        for cone in &self.cones {
            out.push(k);
            k += cone.len();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub max_iter: usize,
    /// Relative primal and dual residual tolerance.
    pub tol_feas: f64,
    /// Relative duality gap tolerance.
    pub tol_gap: f64,
    /// Tolerance on normalized infeasibility certificates.
    pub tol_infeas: f64,
    /// Rounds of equilibration applied before solving.
    pub equilibrate_iters: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_iter: 200,
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-8,
            equilibrate_iters: 15,
            step_fraction: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    /// Iteration limit hit; the best iterate is returned.
    MaxIterations,
    /// Progress stopped before reaching tolerance; the best iterate is returned.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: Status,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `||Ax - b|| / ||b||`, or unnormalized when `b = 0`.
    pub primal_residual: f64,
    /// `||A'y + s - c|| / ||c||`, or unnormalized when `c = 0`.
    pub dual_residual: f64,
    /// `|c'x - b'y| / max(|c'x|, |b'y|, ||c||)`.
    pub gap: f64,
    pub iterations: usize,
}

impl ConicSolution {
    /// Whether residuals and gap are all below `tol`, regardless of status.
    pub fn within(&self, tol: f64) -> bool {
        matches!(self.status, Status::Optimal | Status::MaxIterations | Status::Stalled)
            && self.primal_residual <= tol
            && self.dual_residual <= tol
            && self.gap <= tol
    }

    /// Entries of `x` belonging to cone `i` of `p`.
    pub fn block<'a>(&'a self, p: &ConicProblem, i: usize) -> &'a [f64] {
        let off = p.offsets()[i];
        &self.x.as_slice()[off..off + p.cones[i].len()]
    }
}
