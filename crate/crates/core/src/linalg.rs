//! Dense linear-algebra helpers shared across modules.
//!
//! Heavy lifting (Schur, symmetric eigen, SVD) goes through nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Builds a matrix from row slices. Panics on ragged input.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Mat {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

/// Row-major nested vectors, the interchange layout for JSON and CSV.
pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub fn lambda_max_sym(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min_sym(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Singular values, descending.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with singular values compared against `rtol * sigma_max`.
pub fn numerical_rank(m: &Mat, rtol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > rtol * top).count(),
        _ => 0,
    }
}

pub fn complex_singular_values(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Eigenvalues of a real square matrix (complex in general).
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::SolverError("non-finite matrix entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::SolverError("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Complex LU solve; `None` when a pivot falls below `tol * max|a_ij|`.
pub fn complex_solve(a: &CMat, b: &CMat, tol: f64) -> Option<CMat> {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.iter().map(|z| z.norm()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (piv, pmag) = (col..n)
            .map(|r| (r, lu[(r, col)].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if pmag <= tol * scale {
            return None;
        }
        if piv != col {
            lu.swap_rows(piv, col);
            x.swap_rows(piv, col);
        }
        let p = lu[(col, col)];
        for r in (col + 1)..n {
            let f = lu[(r, col)] / p;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in col..n {
                let v = lu[(col, c)];
                lu[(r, c)] -= f * v;
            }
            for c in 0..x.ncols() {
                let v = x[(col, c)];
                x[(r, c)] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let p = lu[(col, col)];
        for c in 0..x.ncols() {
            let mut acc = x[(col, c)];
            for k in (col + 1)..n {
                acc -= lu[(col, k)] * x[(k, c)];
            }
            x[(col, c)] = acc / p;
        }
    }
    Some(x)
}

/// Largest eigenvalue of a Hermitian matrix stored row-major in `h`
/// (overwritten). Closed form for n <= 2, cyclic Jacobi otherwise.
pub fn hermitian_lambda_max(h: &mut [Complex64], n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => h[0].re,
        2 => {
            let a = h[0].re;
            let d = h[3].re;
            let b = h[1].norm();
            let half = 0.5 * (a - d);
            0.5 * (a + d) + (half * half + b * b).sqrt()
        }
        3 => hermitian3_lambda_max(h),
        _ => {
            jacobi_hermitian(h, n);
            (0..n).map(|i| h[i * n + i].re).fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Trigonometric solution of the characteristic cubic of a 3x3 Hermitian
/// matrix. Absolute error is a few ulps of the matrix norm.
fn hermitian3_lambda_max(h: &[Complex64]) -> f64 {
    let (a11, a22, a33) = (h[0].re, h[4].re, h[8].re);
    let (a12, a13, a23) = (h[1], h[2], h[5]);
    let p1 = a12.norm_sqr() + a13.norm_sqr() + a23.norm_sqr();
    let q = (a11 + a22 + a33) / 3.0;
    let (d1, d2, d3) = (a11 - q, a22 - q, a33 - q);
    let p2 = d1 * d1 + d2 * d2 + d3 * d3 + 2.0 * p1;
    if p2 <= 0.0 {
        return q;
    }
    let p = (p2 / 6.0).sqrt();
    // det(A - qI) for a Hermitian matrix is real.
    let det = d1 * d2 * d3 + 2.0 * (a12 * a23 * a13.conj()).re
        - d1 * a23.norm_sqr()
        - d2 * a13.norm_sqr()
        - d3 * a12.norm_sqr();
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    q + 2.0 * p * (r.acos() / 3.0).cos()
}

fn jacobi_hermitian(h: &mut [Complex64], n: usize) {
    let diag_scale: f64 = (0..n).map(|i| h[i * n + i].re.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += h[p * n + q].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-17 * diag_scale {
            return;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = h[p * n + q];
                let bmag = b.norm();
                if bmag <= 1e-300 {
                    continue;
                }
                // Phase rotation making h[p][q] real and positive.
                let phase = b / bmag;
                let phase_conj = phase.conj();
                for i in 0..n {
                    h[i * n + q] *= phase_conj;
                    h[q * n + i] *= phase;
                }
                let app = h[p * n + p].re;
                let aqq = h[q * n + q].re;
                let tau = (aqq - app) / (2.0 * bmag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let hip = h[i * n + p];
                    let hiq = h[i * n + q];
                    h[i * n + p] = hip * c - hiq * s;
                    h[i * n + q] = hip * s + hiq * c;
                }
                for i in 0..n {
                    let hpi = h[p * n + i];
                    let hqi = h[q * n + i];
                    h[p * n + i] = hpi * c - hqi * s;
                    h[q * n + i] = hpi * s + hqi * c;
                }
                h[p * n + q] = Complex64::new(0.0, 0.0);
                h[q * n + p] = Complex64::new(0.0, 0.0);
            }
        }
    }
}
