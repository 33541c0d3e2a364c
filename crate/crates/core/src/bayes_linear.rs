//! The local-linear normal model and its generalisation to any local linear
//! parametrisation: conjugate posterior, the prior-fit matrix `P0`, matrix
//! shrinkage, structured prior covariances and estimation of the scalar
//! prior precision `w0`.
//!
//! Posteriors are computed in covariance form,
//! `mean = (I + V S)^{-1} (mu0 + V r)` with `V = sigma^{-2} x prior covariance`
//! and `r = Σ w z y`, which is valid for singular `V` and singular `S`.

use alloc::vec::Vec;

use crate::bayes_level::SigmaInference;
use crate::cells::CellFit;
use crate::linalg::{self, Mat, Vector};
use crate::local_fit::LocalDesign;
use crate::start_curves::LinearBasis;
use crate::{Error, Result};

/// Multiplier of the mean local sample size giving the "prior dominates"
/// value of `w0`.
pub const W0_MAX_FACTOR: f64 = 1e12;

/// Normal prior for the local coefficients with mean `mean` and covariance
/// `sigma^2 precision^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPrior {
    pub mean: Vector,
    pub precision: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPosterior {
    pub mean: Vector,
    /// Posterior covariance divided by `sigma^2`, i.e. `(W0 + S)^{-1}`.
    pub cov: Mat,
}

impl LinearPosterior {
    /// The Bayes estimate of the level.
    pub fn level(&self) -> f64 {
        self.mean[0]
    }

    pub fn slope(&self) -> f64 {
        self.mean[1]
    }
}

/// `r = (Σ w y, Σ w dx y, ...)` for the first `p + 1` powers.
pub fn moment_vector(design: &LocalDesign, p: usize) -> Vector {
    Vector::from_fn(p + 1, |j, _| design.sy(j))
}

/// Posterior with prior precision `w0`: `(W0 + S)^{-1} (W0 mu0 + r)`.
pub fn posterior_precision_form(mean0: &Vector, w0: &Mat, s: &Mat, r: &Vector) -> Result<LinearPosterior> {
    let a = w0 + s;
    let cov = linalg::inverse(&a, "W0 + S")?;
    let mean = linalg::solve(&a, &(w0 * mean0 + r), "W0 + S")?;
    Ok(LinearPosterior { mean, cov })
}

/// Posterior with prior covariance `sigma^2 V`: `(I + V S)^{-1} (mu0 + V r)`.
pub fn posterior_covariance_form(mean0: &Vector, v: &Mat, s: &Mat, r: &Vector) -> Result<LinearPosterior> {
    let p = mean0.len();
    let a = Mat::identity(p, p) + v * s;
    let mean = linalg::solve(&a, &(mean0 + v * r), "I + V S")?;
    let cov = linalg::symmetrize(&linalg::solve_matrix(&a, v, "I + V S")?);
    Ok(LinearPosterior { mean, cov })
}

/// Local-linear posterior `(W0 + S)^{-1} {W0 (a0, b0) + S (a~, b~)}`.
pub fn linear_posterior(prior: &LinearPrior, design: &LocalDesign) -> Result<LinearPosterior> {
    if prior.mean.len() != 2 || prior.precision.shape() != (2, 2) {
        return Err(Error::invalid("prior", "local linear prior is two-dimensional"));
    }
    if design.order() < 1 {
        return Err(Error::invalid("design", "needs first-order moments"));
    }
    posterior_precision_form(&prior.mean, &prior.precision, &design.s_matrix(1), &moment_vector(design, 1))
}

/// `P0 = d d' S`
pub fn p0_matrix(d: &Vector, s: &Mat) -> Mat {
    d * (d.transpose() * s)
}

/// `d' S d`
pub fn trace_statistic(d: &Vector, s: &Mat) -> f64 {
    (d.transpose() * s * d)[(0, 0)]
}

/// One cell as seen by the pooled local-linear estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCell {
    pub midpoint: f64,
    pub s: Mat,
    /// Fitted local coefficients `(a~, b~)`.
    pub fit: Vector,
    /// Start-curve level and slope `(m0, m0')` at the midpoint.
    pub prior: Vector,
    pub q0: f64,
}

impl LinearCell {
    /// `d = (a~ - m0, b~ - m0')`
    pub fn d(&self) -> Vector {
        &self.fit - &self.prior
    }

    pub fn s0(&self) -> f64 {
        self.s[(0, 0)]
    }
}

/// Cells with a first-order fit, paired with the start curve's level and
/// slope at each midpoint.
pub fn linear_cells(cells: &[CellFit], m0: impl Fn(f64) -> (f64, f64)) -> Vec<LinearCell> {
    cells
        .iter()
        .filter_map(|c| {
            let fit = c.fit.as_ref()?;
            if fit.order() < 1 {
                return None;
            }
            let (a0, b0) = m0(c.midpoint);
            Some(LinearCell {
                midpoint: c.midpoint,
                s: c.design.s_matrix(1),
                fit: Vector::from_vec(alloc::vec![fit.coefficients[0], fit.coefficients[1]]),
                prior: Vector::from_vec(alloc::vec![a0, b0]),
                q0: fit.q0,
            })
        })
        .collect()
}

/// Prior weight used for matrix shrinkage.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorWeight {
    /// `sigma~^2 P0bar^{-1}`, symmetrized with spectrum clamped to `[0, 1]`.
    Matrix(Mat),
    /// `P0bar` was singular: scalar weight on the level, slope left at its
    /// local-linear value.
    Level(f64),
}

/// Pooled prior weight for matrix shrinkage from `P0bar = k^{-1} Σ d d' S`.
pub fn matrix_shrink_weight(sigma: &SigmaInference, cells: &[LinearCell]) -> Result<PriorWeight> {
    let parts: Vec<(Vector, &Mat)> = cells.iter().map(|c| (c.d(), &c.s)).collect();
    matrix_shrink_weight_from(sigma, &parts)
}

/// [`matrix_shrink_weight`] from `(d, S)` pairs of any dimension.
pub fn matrix_shrink_weight_from(sigma: &SigmaInference, parts: &[(Vector, &Mat)]) -> Result<PriorWeight> {
    if parts.is_empty() {
        return Err(Error::NoInformation);
    }
    let p = parts[0].0.len();
    if sigma.sigma2 == 0.0 {
        return Ok(PriorWeight::Matrix(Mat::zeros(p, p)));
    }
    let k = parts.len() as f64;
    let p_bar = parts.iter().fold(Mat::zeros(p, p), |acc, (d, s)| acc + p0_matrix(d, s)) / k;
    let scale = p_bar.norm();
    let invertible = scale > 0.0 && (p_bar.determinant() / libm::pow(scale, p as f64)).abs() > 1e-12;
    match (invertible, linalg::inverse(&p_bar, "P0bar")) {
        (true, Ok(inv)) => Ok(PriorWeight::Matrix(linalg::clamp_spectrum(&(inv * sigma.sigma2), 0.0, 1.0))),
        _ => {
            let total: f64 = parts.iter().map(|(d, s)| s[(0, 0)] * d[0] * d[0]).sum();
            let w = if total > 0.0 { (k * sigma.sigma2 / total).clamp(0.0, 1.0) } else { 1.0 };
            Ok(PriorWeight::Level(w))
        }
    }
}

/// `M prior + (I - M) fit`, or the level-only fallback.
pub fn matrix_shrink_estimate(weight: &PriorWeight, prior: &Vector, fit: &Vector) -> Vector {
    match weight {
        PriorWeight::Matrix(m) => m * prior + (Mat::identity(m.nrows(), m.ncols()) - m) * fit,
        PriorWeight::Level(w) => {
            let mut out = fit.clone();
            out[0] = w * prior[0] + (1.0 - w) * fit[0];
            out
        }
    }
}

/// `A_x = [[1, -(x - xbar)], [-(x - xbar), v^2 + (x - xbar)^2]]`, the
/// precision shape with `W0 = w0 A_x`.
pub fn precision_structure_linear(xbar: f64, v2: f64, x: f64) -> Result<Mat> {
    if !(v2 > 0.0) {
        return Err(Error::invalid("v2", "covariate variance must be positive"));
    }
    let c = x - xbar;
    Ok(Mat::from_row_slice(2, 2, &[1.0, -c, -c, v2 + c * c]))
}

/// `A_x^{-1} = [[1 + c^2/v^2, c/v^2], [c/v^2, 1/v^2]]` with `c = x - xbar`.
pub fn covariance_structure_linear(xbar: f64, v2: f64, x: f64) -> Result<Mat> {
    if !(v2 > 0.0) {
        return Err(Error::invalid("v2", "covariate variance must be positive"));
    }
    let c = x - xbar;
    Ok(Mat::from_row_slice(2, 2, &[1.0 + c * c / v2, c / v2, c / v2, 1.0 / v2]))
}

/// Covariance shape of `(a, b)` induced by a linear start-curve basis:
/// `[[z'Kz, z'Kz*], [z'Kz*, z*'Kz*]]` with `K = gram^{-1}`, so that the prior
/// covariance is `sigma^2 w0^{-1}` times this matrix.
pub fn covariance_structure_basis(basis: &LinearBasis, gram_inv: &Mat, x: f64) -> Mat {
    let z = basis.eval(x);
    let zs = basis.deriv(x);
    let kz = gram_inv * &z;
    let kzs = gram_inv * &zs;
    let cross = z.dot(&kzs);
    Mat::from_row_slice(2, 2, &[z.dot(&kz), cross, cross, zs.dot(&kzs)])
}

/// One cell for estimating the scalar `w0` in `prior covariance = sigma^2 C / w0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredCell {
    pub d: Vector,
    pub s: Mat,
    /// Covariance shape `C`, e.g. `A_x^{-1}`.
    pub shape: Mat,
}

impl StructuredCell {
    pub fn from_linear(cell: &LinearCell, shape: Mat) -> Self {
        StructuredCell {
            d: cell.d(),
            s: cell.s.clone(),
            shape,
        }
    }
}

/// The "prior dominates" value `W0_MAX_FACTOR x mean s0`.
pub fn w0_max(cells: &[StructuredCell]) -> f64 {
    let mean = cells.iter().map(|c| c.s[(0, 0)]).sum::<f64>() / cells.len().max(1) as f64;
    W0_MAX_FACTOR * mean.max(1.0)
}

/// Marginal log-likelihood of `w0` up to constants and a factor 1/2:
/// `Σ -log det(I + C S / w0) - sigma~^{-2} Σ d' S (C S / w0 + I)^{-1} d`.
pub fn profile_objective(sigma2: f64, cells: &[StructuredCell], w0: f64) -> f64 {
    cells
        .iter()
        .map(|c| {
            let p = c.d.len();
            let vs = &c.shape * &c.s / w0;
            let a = Mat::identity(p, p) + &vs;
            let logdet = libm::log(a.determinant());
            let quad = match a.clone().lu().solve(&c.d) {
                Some(x) => c.d.dot(&(&c.s * x)),
                None => f64::INFINITY,
            };
            -logdet - quad / sigma2
        })
        .sum()
}

const LOG10_W0_LO: f64 = -6.0;
const LOG10_W0_HI: f64 = 12.0;

/// Maximises [`profile_objective`] over `log10 w0` in `[-6, 12]`: a coarse
/// grid scan brackets the maximum, golden-section search refines it to 1e-6
/// in log space. A maximum at the upper end returns [`w0_max`].
pub fn fit_w0_profile(sigma: &SigmaInference, cells: &[StructuredCell]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::NoInformation);
    }
    if !(sigma.sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "must be positive"));
    }
    let f = |t: f64| profile_objective(sigma.sigma2, cells, libm::pow(10.0, t));
    let steps = 180;
    let step = (LOG10_W0_HI - LOG10_W0_LO) / steps as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..=steps {
        let v = f(LOG10_W0_LO + i as f64 * step);
        if v > best.1 {
            best = (i, v);
        }
    }
    if best.0 == steps {
        return Ok(w0_max(cells));
    }
    let centre = LOG10_W0_LO + best.0 as f64 * step;
    let t = golden_max(f, (centre - step).max(LOG10_W0_LO), centre + step, 1e-6);
    Ok(libm::pow(10.0, t))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Regression estimate from `d'Sd / sigma~^2 - 2 = w0^{-1} Tr(C S) + error`:
/// the least-squares slope through the origin is `1 / w0`. A nonpositive
/// slope returns [`w0_max`].
pub fn regression_w0_estimate(sigma: &SigmaInference, cells: &[StructuredCell]) -> Result<f64> {
    if cells.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            have: cells.len(),
        });
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for c in cells {
        let x = (&c.shape * &c.s).trace();
        let y = trace_statistic(&c.d, &c.s) / sigma.sigma2 - 2.0;
        sxy += x * y;
        sxx += x * x;
    }
    if !(sxx > 0.0) {
        return Err(Error::NoInformation);
    }
    let slope = sxy / sxx;
    Ok(if slope > 0.0 { 1.0 / slope } else { w0_max(cells) })
}

/// Diagonal precision `W0 = diag(w_a r_a, w_b r_b)`: least squares of
/// `d'Sd / sigma~^2 - 2` on `(s0 / r_a, s2 / r_b)` without intercept gives
/// `(1/w_a, 1/w_b)`. Nonpositive coefficients map to the "prior dominates" value.
pub fn regression_w0_diagonal(
    sigma: &SigmaInference,
    cells: &[LinearCell],
    r_a: impl Fn(f64) -> f64,
    r_b: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    if cells.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            have: cells.len(),
        });
    }
    let mut xtx = Mat::zeros(2, 2);
    let mut xty = Vector::zeros(2);
    for c in cells {
        let (ra, rb) = (r_a(c.midpoint), r_b(c.midpoint));
        if !(ra > 0.0 && rb > 0.0) {
            return Err(Error::invalid("r_a, r_b", "must be positive"));
        }
        let x = Vector::from_vec(alloc::vec![c.s[(0, 0)] / ra, c.s[(1, 1)] / rb]);
        let y = trace_statistic(&c.d(), &c.s) / sigma.sigma2 - 2.0;
        xtx += &x * x.transpose();
        xty += x * y;
    }
    let coef = linalg::solve(&xtx, &xty, "diagonal regression")?;
    let max = W0_MAX_FACTOR * cells.iter().map(LinearCell::s0).sum::<f64>() / cells.len() as f64;
    let inv = |v: f64| if v > 0.0 { 1.0 / v } else { max };
    Ok((inv(coef[0]), inv(coef[1])))
}
