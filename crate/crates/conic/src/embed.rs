//! Vectorization of symmetric matrices and the real embedding of Hermitian
//! matrices.
//!
//! `svec` stacks the lower triangle column by column and scales the
//! off-diagonal entries by `sqrt(2)`, so that `svec(A) . svec(B) = tr(AB)`.
//!
//! A Hermitian `H = Hr + j Hi` of order `n` is embedded as the real symmetric
//! matrix `[[Hr, -Hi], [Hi, Hr]]` of order `2n`. The embedding doubles every
//! eigenvalue and every trace, so coefficient matrices carry a factor of one
//! half: `<svec(embed(C)) / 2, svec(X)> = tr(C hermitian_part(X))`.

use nalgebra::{Complex, DMatrix, DVector};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of `svec` for an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Order of the matrix whose `svec` has length `len`.
pub fn svec_order(len: usize) -> usize {
    // n(n+1)/2 = len
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    debug_assert_eq!(svec_len(n), len, "not a triangular number");
    n
}

pub fn svec(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut out = DVector::zeros(svec_len(n));
    svec_into(a, out.as_mut_slice());
    out
}

pub fn svec_into(a: &DMatrix<f64>, out: &mut [f64]) {
    let n = a.nrows();
    let mut k = 0;
    for j in 0..n {
        out[k] = a[(j, j)];
        k += 1;
        for i in j + 1..n {
            out[k] = SQRT2 * 0.5 * (a[(i, j)] + a[(j, i)]);
            k += 1;
        }
    }
}

pub fn smat(v: &[f64]) -> DMatrix<f64> {
    let n = svec_order(v.len());
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        a[(j, j)] = v[k];
        k += 1;
        for i in j + 1..n {
            let x = v[k] / SQRT2;
            a[(i, j)] = x;
            a[(j, i)] = x;
            k += 1;
        }
    }
    a
}

/// Real symmetric embedding `[[Re, -Im], [Im, Re]]`.
pub fn embed_hermitian(h: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Hermitian matrix represented by a real symmetric `2n x 2n` matrix: the
/// average of its two diagonal blocks plus `j` times the antisymmetric part of
/// its off-diagonal blocks. Positive semidefinite whenever `x` is.
pub fn hermitian_part(x: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    let n = x.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (x[(i, j)] + x[(i + n, j + n)]);
        let im = 0.5 * (x[(i + n, j)] - x[(i, j + n)]);
        Complex::new(re, im)
    })
}

/// Coefficient vector `c` with `c . svec(X) = Re tr(C H(X))` for Hermitian `C`
/// and `X` a real symmetric embedding variable.
pub fn hermitian_coeff(c: &DMatrix<Complex<f64>>) -> DVector<f64> {
    svec(&embed_hermitian(c)) * 0.5
}

/// Same as [`hermitian_coeff`] written into an existing slice.
pub fn hermitian_coeff_into(c: &DMatrix<Complex<f64>>, out: &mut [f64]) {
    svec_into(&embed_hermitian(c), out);
    out.iter_mut().for_each(|v| *v *= 0.5);
}
