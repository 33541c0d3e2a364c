//! Small dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &Mat, b: &Vector, what: &'static str) -> Result<Vector> {
    let lu = a.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular(what));
    }
    lu.solve(b).ok_or(Error::Singular(what))
}

/// Solves `a X = b` for a matrix right-hand side.
pub fn solve_matrix(a: &Mat, b: &Mat, what: &'static str) -> Result<Mat> {
    let lu = a.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular(what));
    }
    lu.solve(b).ok_or(Error::Singular(what))
}

pub fn inverse(a: &Mat, what: &'static str) -> Result<Mat> {
    a.clone().try_inverse().ok_or(Error::Singular(what))
}

/// `(m + m') / 2`
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes `m`, then clamps its eigenvalues to `[lo, hi]`.
pub fn clamp_spectrum(m: &Mat, lo: f64, hi: f64) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.clamp(lo, hi));
    &eig.eigenvectors * Mat::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Symmetric square root `Q sqrt(max(L, 0)) Q'` of a symmetric matrix.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * Mat::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Solves the weighted least-squares normal equations `G beta = r` where
/// `G` is a moment matrix whose scale is set by `g[(0, 0)]`; fails when the
/// normalized determinant `det(G) / g00^p` drops below `tol`.
pub fn solve_moments(g: &Mat, r: &Vector, tol: f64) -> Result<Vector> {
    let p = g.nrows();
    let g00 = g[(0, 0)];
    if !(g00 > 0.0) {
        return Err(Error::EmptyNeighbourhood);
    }
    let det = g.determinant();
    if !(det / libm::pow(g00, p as f64) >= tol) {
        return Err(Error::DegenerateDesign);
    }
    solve(g, r, "local design").map_err(|_| Error::DegenerateDesign)
}
