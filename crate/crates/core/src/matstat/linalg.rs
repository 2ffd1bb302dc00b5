//! Small dense symmetric matrix kernels.
//!
//! Matrices here are at most a few dozen rows (K endpoints, or the 2K fixed
//! effects), so everything is a plain Cholesky on an `nalgebra::DMatrix`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// A symmetric positive-definite matrix together with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    a: Mat,
    chol: Mat,
}

impl SpdMatrix {
    pub fn new(a: Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Invalid(format!(
                "matrix is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        if !is_symmetric(&a, 1e-12) {
            return Err(Error::Invalid("matrix is not symmetric".into()));
        }
        let chol = cholesky(&a)?;
        Ok(Self { a, chol })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.a
    }

    pub fn lower(&self) -> &Mat {
        &self.chol
    }

    pub fn solve(&self, b: &Mat) -> Mat {
        cholesky_solve(&self.chol, b)
    }

    pub fn inverse(&self) -> Mat {
        let inv = cholesky_solve(&self.chol, &Mat::identity(self.dim(), self.dim()));
        symmetrize(&inv)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Symmetry check relative to the largest absolute entry.
pub fn is_symmetric(a: &Mat, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Lower-triangular `L` with `L Lᵀ = a`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Invalid("cholesky of a non-square matrix".into()));
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} is {d:.3e}"
            )));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solve `L Lᵀ X = B` given the lower factor.
pub fn cholesky_solve(l: &Mat, b: &Mat) -> Mat {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

pub fn solve_spd(a: &Mat, b: &Mat) -> Result<Mat> {
    let l = cholesky(a)?;
    let mut x = cholesky_solve(&l, b);
    // one step of refinement
    let r = b - a * &x;
    x += cholesky_solve(&l, &r);
    Ok(x)
}

pub fn invert_spd(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let inv = solve_spd(a, &Mat::identity(n, n))?;
    Ok(symmetrize(&inv))
}

pub fn log_det_spd(a: &Mat) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn min_eigenvalue(a: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Floor the eigenvalues of a symmetric matrix at `floor`.
pub fn project_psd(a: &Mat, floor: f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * Mat::from_diagonal(&d) * q.transpose()))
}

/// `F` with `F Fᵀ = a` for a symmetric PSD `a`: the Cholesky factor when it
/// exists, otherwise the symmetric eigen square root (negative rounding
/// noise in the eigenvalues is clipped to zero).
pub fn psd_factor(a: &Mat) -> Mat {
    if let Ok(l) = cholesky(a) {
        return l;
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d)
}

/// Infinity norm (max absolute row sum).
pub fn norm_inf(a: &Mat) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Invalid("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Serde adapter storing a matrix as row-major nested arrays.
pub mod rows_serde {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
