//! Parametric start curves `m0(x, xi) = xi' z(x)`: least-squares fit,
//! sandwich covariance, draws from the approximate posterior of the
//! least-false parameter, and a delete-knot cubic spline basis.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, Mat, Vector};
use crate::{Dataset, Error, Result};

/// Default number of start curves drawn for Monte-Carlo averaging.
pub const DEFAULT_DRAWS: usize = 100;

/// One basis function, evaluated in the standardized coordinate
/// `u = (x - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BasisTerm {
    Constant,
    /// `u^k`, `k >= 1`
    Power(u32),
    /// `((u - kappa)^+)^3` with the knot `kappa` given on the original `x` scale.
    TruncatedCubic(f64),
}

/// A linear basis `z(x) = (1, g_2(x), ..., g_p(x))` with derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBasis {
    terms: Vec<BasisTerm>,
    center: f64,
    scale: f64,
}

impl LinearBasis {
    /// The first term must be the constant.
    pub fn new(terms: Vec<BasisTerm>, center: f64, scale: f64) -> Result<Self> {
        if terms.first() != Some(&BasisTerm::Constant) {
            return Err(Error::invalid("basis", "first function must be the constant"));
        }
        if terms[1..].contains(&BasisTerm::Constant) || terms.contains(&BasisTerm::Power(0)) {
            return Err(Error::invalid("basis", "only one constant term allowed"));
        }
        if !(scale > 0.0 && scale.is_finite() && center.is_finite()) {
            return Err(Error::invalid("scale", "must be positive and finite"));
        }
        Ok(LinearBasis { terms, center, scale })
    }

    pub fn constant() -> Self {
        LinearBasis {
            terms: vec![BasisTerm::Constant],
            center: 0.0,
            scale: 1.0,
        }
    }

    /// `{1, u, ..., u^degree}` with `u` standardized by the covariate mean
    /// and standard deviation.
    pub fn polynomial(data: &Dataset, degree: u32) -> Result<Self> {
        let mut terms = vec![BasisTerm::Constant];
        terms.extend((1..=degree).map(BasisTerm::Power));
        if degree == 0 {
            return Ok(LinearBasis::constant());
        }
        let sd = libm::sqrt(data.variance_of(0));
        if !(sd > 0.0) {
            return Err(Error::DegenerateRange);
        }
        LinearBasis::new(terms, data.mean_of(0), sd)
    }

    /// Cubic polynomial plus truncated cubics at the given knots.
    pub fn cubic_spline(data: &Dataset, knots: &[f64]) -> Result<Self> {
        let mut b = LinearBasis::polynomial(data, 3)?;
        b.terms.extend(knots.iter().map(|&k| BasisTerm::TruncatedCubic(k)));
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn knots(&self) -> Vec<f64> {
        self.terms
            .iter()
            .filter_map(|t| match t {
                BasisTerm::TruncatedCubic(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    fn without(&self, index: usize) -> Self {
        let mut b = self.clone();
        b.terms.remove(index);
        b
    }

    /// `z(x)`
    pub fn eval(&self, x: f64) -> Vector {
        let u = (x - self.center) / self.scale;
        Vector::from_iterator(
            self.len(),
            self.terms.iter().map(|t| match *t {
                BasisTerm::Constant => 1.0,
                BasisTerm::Power(k) => libm::pow(u, k as f64),
                BasisTerm::TruncatedCubic(knot) => {
                    let v = (u - (knot - self.center) / self.scale).max(0.0);
                    v * v * v
                }
            }),
        )
    }

    /// `z*(x)`, the derivative of `z` with respect to `x`.
    pub fn deriv(&self, x: f64) -> Vector {
        let u = (x - self.center) / self.scale;
        Vector::from_iterator(
            self.len(),
            self.terms.iter().map(|t| {
                let du = match *t {
                    BasisTerm::Constant => 0.0,
                    BasisTerm::Power(k) => k as f64 * libm::pow(u, (k - 1) as f64),
                    BasisTerm::TruncatedCubic(knot) => {
                        let v = (u - (knot - self.center) / self.scale).max(0.0);
                        3.0 * v * v
                    }
                };
                du / self.scale
            }),
        )
    }

    /// `m0(x, xi)`
    pub fn value(&self, xi: &Vector, x: f64) -> f64 {
        xi.dot(&self.eval(x))
    }

    /// `m0'(x, xi)`
    pub fn slope(&self, xi: &Vector, x: f64) -> f64 {
        xi.dot(&self.deriv(x))
    }
}

impl fmt::Display for LinearBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let knots = self.knots();
        let degree = self
            .terms
            .iter()
            .filter_map(|t| match t {
                BasisTerm::Power(k) => Some(*k),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        write!(f, "degree {degree}")?;
        if !knots.is_empty() {
            write!(f, ", {} knots", knots.len())?;
        }
        Ok(())
    }
}

/// `n^{-1} Σ z(x_i) z(x_i)'`
pub fn gram(data: &Dataset, basis: &LinearBasis) -> Mat {
    let p = basis.len();
    let mut g = Mat::zeros(p, p);
    for (x, _) in data.pairs() {
        let z = basis.eval(x);
        g += &z * z.transpose();
    }
    g / data.len() as f64
}

/// Inverse of the Gram matrix, failing when it is numerically singular.
pub fn gram_inverse(data: &Dataset, basis: &LinearBasis) -> Result<Mat> {
    let g = gram(data, basis);
    check_conditioning(&g)?;
    linalg::inverse(&g, "basis gram matrix")
}

/// Rejects Gram matrices whose diagonally rescaled version has a tiny
/// smallest eigenvalue.
fn check_conditioning(g: &Mat) -> Result<()> {
    let p = g.nrows();
    let d: Vec<f64> = (0..p).map(|i| g[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Singular("basis gram matrix"));
    }
    let corr = Mat::from_fn(p, p, |i, j| g[(i, j)] / libm::sqrt(d[i] * d[j]));
    let min = corr.symmetric_eigen().eigenvalues.min();
    if !(min > 1e-12) {
        return Err(Error::Singular("basis gram matrix"));
    }
    Ok(())
}

/// Least-squares coefficients `(Σ z z')^{-1} Σ z y`.
pub fn basis_mle(data: &Dataset, basis: &LinearBasis) -> Result<Vector> {
    let g_inv = gram_inverse(data, basis)?;
    let mut zy = Vector::zeros(basis.len());
    for (x, y) in data.pairs() {
        zy += basis.eval(x) * y;
    }
    Ok(g_inv * zy / data.len() as f64)
}

/// `V~ = G^{-1} M G^{-1}` with `G = n^{-1} Σ z z'` and
/// `M = n^{-1} Σ (y - m0(x, xi))^2 z z'`.
pub fn sandwich_cov(data: &Dataset, basis: &LinearBasis, xi: &Vector) -> Result<Mat> {
    let g_inv = gram_inverse(data, basis)?;
    let p = basis.len();
    let mut m = Mat::zeros(p, p);
    for (x, y) in data.pairs() {
        let z = basis.eval(x);
        let r = y - xi.dot(&z);
        m += &z * z.transpose() * (r * r);
    }
    m /= data.len() as f64;
    Ok(linalg::symmetrize(&(&g_inv * m * &g_inv)))
}

/// Approximate posterior `N(xi~, V~/n)` of the start-curve parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct StartCurvePosterior {
    pub basis: LinearBasis,
    pub xi_hat: Vector,
    /// `V~ / n`
    pub cov: Mat,
}

impl StartCurvePosterior {
    pub fn fit(data: &Dataset, basis: LinearBasis) -> Result<Self> {
        let xi_hat = basis_mle(data, &basis)?;
        let cov = sandwich_cov(data, &basis, &xi_hat)? / data.len() as f64;
        Ok(StartCurvePosterior { basis, xi_hat, cov })
    }

    pub fn value(&self, x: f64) -> f64 {
        self.basis.value(&self.xi_hat, x)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.basis.slope(&self.xi_hat, x)
    }
}

/// `m` draws from `N(xi~, V~/n)`, reproducible for a given seed.
pub fn sample_start_curves(posterior: &StartCurvePosterior, m: usize, seed: u64) -> Vec<Vector> {
    sample_normal(&posterior.xi_hat, &posterior.cov, m, seed)
}

/// `m` draws from `N(mean, cov)` using the symmetric square root of `cov`,
/// so zero-variance directions stay exactly at the mean.
///
/// The generator is ChaCha20 seeded from `seed`; draws are taken in order
/// from a single stream, so the first `m` draws do not depend on how many
/// more are requested.
pub fn sample_normal(mean: &Vector, cov: &Mat, m: usize, seed: u64) -> Vec<Vector> {
    let root = linalg::psd_sqrt(cov);
    let p = mean.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let z = Vector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
            mean + &root * z
        })
        .collect()
}

/// Residual sum of squares of the least-squares fit in `basis`, tolerant of
/// rank deficiency.
fn rss(data: &Dataset, basis: &LinearBasis) -> f64 {
    let n = data.len();
    let p = basis.len();
    let z = Mat::from_fn(n, p, |i, j| basis.eval(data.x(i))[j]);
    let y = Vector::from_column_slice(data.ys());
    let svd = z.clone().svd(true, true);
    match svd.solve(&y, 1e-12 * svd.singular_values.max()) {
        Ok(beta) => (y - z * beta).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

/// Cubic regression spline with knots chosen by backward deletion.
///
/// Starts from `max_knots` equally spaced interior knots and repeatedly drops
/// the knot whose removal increases the residual sum of squares least, until
/// that increase exceeds twice the current residual variance. Increases at
/// rounding level, relative to the total sum of squares, count as zero.
pub fn delete_knot_spline_basis(data: &Dataset, max_knots: usize) -> Result<LinearBasis> {
    let n = data.len();
    if n <= max_knots + 4 {
        return Err(Error::TooFewPoints {
            needed: max_knots + 5,
            have: n,
        });
    }
    let (lo, hi) = data.x_range();
    let knots: Vec<f64> = (1..=max_knots)
        .map(|j| lo + (hi - lo) * j as f64 / (max_knots + 1) as f64)
        .collect();
    let mut basis = LinearBasis::cubic_spline(data, &knots)?;
    let mean = data.mean_y();
    let floor = 1e-12 * data.ys().iter().map(|y| (y - mean) * (y - mean)).sum::<f64>();
    let mut current = rss(data, &basis);
    while basis.len() > 4 {
        let resid_var = current / (n - basis.len()) as f64;
        let (index, candidate) = (4..basis.len())
            .map(|i| (i, rss(data, &basis.without(i))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one knot");
        if candidate - current > (2.0 * resid_var).max(floor) {
            break;
        }
        basis = basis.without(index);
        current = candidate;
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn noisy(n: usize, seed: u64, f: impl Fn(f64) -> f64, sd: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| f(x) + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let data = noisy(50, 1, |x| x, 1.0);
        let b = LinearBasis::cubic_spline(&data, &[0.3, 0.6]).unwrap();
        for &x in &[0.1, 0.35, 0.8] {
            let e = 1e-6;
            let fd = (b.eval(x + e) - b.eval(x - e)) / (2.0 * e);
            assert!((fd - b.deriv(x)).abs().max() < 1e-6);
        }
    }

    #[test]
    fn mle_interpolates() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let data = Dataset::new(xs.clone(), xs.iter().map(|x| 2.0 + 3.0 * x).collect()).unwrap();
        let basis = LinearBasis::new(vec![BasisTerm::Constant, BasisTerm::Power(1)], 0.0, 1.0).unwrap();
        let xi = basis_mle(&data, &basis).unwrap();
        assert!((xi[0] - 2.0).abs() < 1e-12 && (xi[1] - 3.0).abs() < 1e-12);
        assert!(sandwich_cov(&data, &basis, &xi).unwrap().abs().max() < 1e-20);
    }

    #[test]
    fn constant_basis_gives_mean() {
        let data = noisy(30, 2, |x| x, 1.0);
        let xi = basis_mle(&data, &LinearBasis::constant()).unwrap();
        assert!((xi[0] - data.mean_y()).abs() < 1e-14);
    }

    #[test]
    fn residuals_orthogonal_to_basis() {
        let data = noisy(100, 3, |x| libm::sin(5.0 * x), 0.3);
        let basis = LinearBasis::cubic_spline(&data, &[0.5]).unwrap();
        let xi = basis_mle(&data, &basis).unwrap();
        let mut acc = Vector::zeros(basis.len());
        for (x, y) in data.pairs() {
            let z = basis.eval(x);
            acc += &z * (y - xi.dot(&z));
        }
        assert!(acc.abs().max() < 1e-8);
    }

    #[test]
    fn singular_gram_is_an_error() {
        let data = Dataset::new(vec![1.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let basis = LinearBasis::new(vec![BasisTerm::Constant, BasisTerm::Power(1)], 0.0, 1.0).unwrap();
        assert!(matches!(basis_mle(&data, &basis), Err(Error::Singular(_))));
    }

    #[test]
    fn sandwich_is_symmetric_psd() {
        let data = noisy(200, 4, |x| x * x, 0.5);
        let basis = LinearBasis::polynomial(&data, 2).unwrap();
        let xi = basis_mle(&data, &basis).unwrap();
        let v = sandwich_cov(&data, &basis, &xi).unwrap();
        assert!((&v - v.transpose()).abs().max() < 1e-12);
        assert!(v.clone().symmetric_eigen().eigenvalues.min() > -1e-10);
    }

    #[test]
    fn sandwich_near_model_based_under_homoskedastic_truth() {
        let data = noisy(5000, 5, |x| 1.0 + 2.0 * x, 0.7);
        let basis = LinearBasis::polynomial(&data, 1).unwrap();
        let xi = basis_mle(&data, &basis).unwrap();
        let v = sandwich_cov(&data, &basis, &xi).unwrap();
        let model = gram_inverse(&data, &basis).unwrap() * 0.49;
        let rel = (&v - &model).norm() / model.norm();
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn covariance_shrinks_like_one_over_n() {
        let f = |x: f64| libm::sin(3.0 * x);
        let tr = |n| {
            let data = noisy(n, 6, f, 0.5);
            StartCurvePosterior::fit(&data, LinearBasis::polynomial(&data, 1).unwrap()).unwrap().cov.trace()
        };
        let ratio = tr(2000) / tr(1000);
        assert!((ratio - 0.5).abs() < 0.125, "{ratio}");
    }

    #[test]
    fn zero_covariance_draws_are_the_estimate() {
        let data = noisy(40, 7, |x| x, 1.0);
        let mut post = StartCurvePosterior::fit(&data, LinearBasis::polynomial(&data, 1).unwrap()).unwrap();
        post.cov.fill(0.0);
        for d in sample_start_curves(&post, 10, 3) {
            assert_eq!(d, post.xi_hat);
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let data = noisy(40, 8, |x| x, 1.0);
        let post = StartCurvePosterior::fit(&data, LinearBasis::polynomial(&data, 1).unwrap()).unwrap();
        assert_eq!(sample_start_curves(&post, 5, 42), sample_start_curves(&post, 5, 42));
        assert_ne!(sample_start_curves(&post, 5, 42), sample_start_curves(&post, 5, 43));
    }

    #[test]
    fn draw_moments() {
        let post = StartCurvePosterior {
            basis: LinearBasis::new(vec![BasisTerm::Constant, BasisTerm::Power(1)], 0.0, 1.0).unwrap(),
            xi_hat: Vector::from_vec(vec![1.0, -2.0]),
            cov: Mat::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]),
        };
        let n = 100_000;
        let draws = sample_start_curves(&post, n, 11);
        let mean = draws.iter().fold(Vector::zeros(2), |a, d| a + d) / n as f64;
        for j in 0..2 {
            let se = libm::sqrt(post.cov[(j, j)] / n as f64);
            assert!((mean[j] - post.xi_hat[j]).abs() < 4.0 * se);
        }
        let cov = draws.iter().fold(Mat::zeros(2, 2), |a, d| {
            let c = d - &mean;
            a + &c * c.transpose()
        }) / (n - 1) as f64;
        let spectral = |m: &Mat| m.clone().symmetric_eigen().eigenvalues.abs().max();
        assert!(spectral(&(&cov - &post.cov)) < 0.05 * spectral(&post.cov));
    }

    #[test]
    fn affine_reparameterization_keeps_fitted_values() {
        let data = noisy(60, 9, libm::exp, 0.2);
        let a = LinearBasis::new(vec![BasisTerm::Constant, BasisTerm::Power(1), BasisTerm::Power(2)], 0.0, 1.0).unwrap();
        let b = LinearBasis::new(vec![BasisTerm::Constant, BasisTerm::Power(1), BasisTerm::Power(2)], 0.4, 3.0).unwrap();
        let (xa, xb) = (basis_mle(&data, &a).unwrap(), basis_mle(&data, &b).unwrap());
        for (x, _) in data.pairs() {
            assert!((a.value(&xa, x) - b.value(&xb, x)).abs() < 1e-10);
        }
    }

    #[test]
    fn no_knots_is_plain_cubic() {
        let data = noisy(30, 10, |x| x, 1.0);
        let b = delete_knot_spline_basis(&data, 0).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.knots().is_empty());
        assert!(matches!(delete_knot_spline_basis(&data, 26), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn exact_cubic_loses_every_knot() {
        let data = noisy(120, 12, |x| 1.0 - 2.0 * x + 3.0 * x * x * x, 0.0);
        let b = delete_knot_spline_basis(&data, 8).unwrap();
        assert!(b.knots().is_empty(), "{:?}", b.knots());
    }

    #[test]
    fn noisy_cubic_keeps_few_knots() {
        // The stopping rule is AIC-like, so some spurious knots survive.
        let mut counts: Vec<usize> = (0..9)
            .map(|s| {
                let data = noisy(300, 100 + s, |x| 1.0 - 2.0 * x + 3.0 * x * x * x, 0.2);
                delete_knot_spline_basis(&data, 8).unwrap().knots().len()
            })
            .collect();
        counts.sort();
        assert!(counts[4] <= 2, "{counts:?}");
    }

    #[test]
    fn smooth_truth_keeps_few_knots() {
        let max_knots = 12;
        let mut counts: Vec<usize> = (0..7)
            .map(|s| {
                let data = noisy(400, 200 + s, |x| libm::sin(2.0 * core::f64::consts::PI * x), 0.3);
                delete_knot_spline_basis(&data, max_knots).unwrap().knots().len()
            })
            .collect();
        counts.sort();
        assert!(counts[3] <= max_knots / 2, "{counts:?}");
    }

    proptest! {
        #[test]
        fn sandwich_psd_random(seed in 0u64..300, n in 10usize..60) {
            let data = noisy(n, seed, |x| x, 1.0);
            let basis = LinearBasis::polynomial(&data, 2).unwrap();
            let xi = basis_mle(&data, &basis).unwrap();
            let v = sandwich_cov(&data, &basis, &xi).unwrap();
            prop_assert!((&v - v.transpose()).abs().max() < 1e-12);
            prop_assert!(v.symmetric_eigen().eigenvalues.min() > -1e-10);
        }
    }
}
