//! Poisson regression: Gamma-conjugate local levels with empirical-Bayes
//! precision, log-linear start curves fitted by maximum likelihood with a
//! sandwich covariance, the local log-linear model with its slope integrated
//! out by quadrature, and the start-curve-times-correction model.

use alloc::vec::Vec;

use crate::bayes_level::shrink;
use crate::cells::CellFit;
use crate::linalg::{self, Mat, Vector};
use crate::local_fit::LocalDesign;
use crate::start_curves::{BasisTerm, LinearBasis, StartCurvePosterior};
use crate::{Dataset, Error, Result};

/// Newton step limit for the log-linear maximum likelihood fit.
pub const MAX_NEWTON_STEPS: usize = 100;

/// Grid size for the local slope posterior.
pub const SLOPE_GRID_POINTS: usize = 401;

const SLOPE_GRID_SDS: f64 = 5.0;
const EDGE_INTERVALS: usize = 10;
const EDGE_MASS: f64 = 0.01;

/// `Gamma(shape, rate)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    /// Mean `m0`, variance `m0 / w0`.
    pub fn centred(m0: f64, w0: f64) -> Self {
        GammaPrior {
            shape: w0 * m0,
            rate: w0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPosterior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Weighted count summaries of one neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonLocalStats {
    pub s0: f64,
    pub t0: f64,
    /// `Σ w y`
    pub wy: f64,
}

impl PoissonLocalStats {
    pub fn from_design(design: &LocalDesign) -> Self {
        PoissonLocalStats {
            s0: design.s0(),
            t0: design.t0(),
            wy: design.sy(0),
        }
    }

    /// `Σ w y / s0`, the local maximum likelihood level.
    pub fn m_tilde(&self) -> Result<f64> {
        if !(self.s0 > 0.0) {
            return Err(Error::EmptyNeighbourhood);
        }
        Ok(self.wy / self.s0)
    }
}

/// Local Bayes answer: posterior mean, the weight it puts on the start value
/// and the posterior variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonEstimate {
    pub mean: f64,
    pub prior_weight: f64,
    pub variance: f64,
}

/// `Gamma(w0 m0 + Σ w y, w0 + s0)`.
pub fn poisson_level_posterior(prior: GammaPrior, stats: PoissonLocalStats) -> Result<GammaPosterior> {
    if !(prior.shape >= 0.0 && prior.rate >= 0.0) || prior.rate.is_infinite() {
        return Err(Error::invalid("prior", "needs finite, nonnegative shape and rate"));
    }
    let rate = prior.rate + stats.s0;
    if !(rate > 0.0) {
        return Err(Error::NoInformation);
    }
    Ok(GammaPosterior {
        shape: prior.shape + stats.wy,
        rate,
    })
}

fn check_counts(data: &Dataset) -> Result<()> {
    if data.ys().iter().all(|&y| y >= 0.0 && y == libm::floor(y)) {
        Ok(())
    } else {
        Err(Error::invalid("y", "counts must be nonnegative integers"))
    }
}

/// `P0 = (s0 / m0)(m~ - m0)^2`, with mean `t0/s0 + s0/w0` under the model.
pub fn poisson_p0(stats: PoissonLocalStats, m0: f64) -> Result<f64> {
    if !(m0 > 0.0) {
        return Err(Error::invalid("m0", "start value must be positive"));
    }
    let d = stats.m_tilde()? - m0;
    Ok(stats.s0 / m0 * d * d)
}

/// How the prior weight is obtained from `P0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PoissonPooling {
    /// Solve `P0 - t0/s0 = s0/w0` at each `x`; a nonpositive left side pins
    /// the estimate at `m0`.
    Local,
    /// Weight `1 / P0bar` on `m0`, truncated to `[0, 1]`, with `P0bar` the
    /// mean of `P0` over cells.
    Global { p0_bar: f64 },
}

/// Empirical-Bayes `w0` from `P0 - t0/s0 = s0/w0`; infinite when the left
/// side is not positive.
pub fn poisson_eb_w0(stats: PoissonLocalStats, m0: f64) -> Result<f64> {
    let lambda = poisson_p0(stats, m0)? - stats.t0 / stats.s0;
    Ok(if lambda > 0.0 { stats.s0 / lambda } else { f64::INFINITY })
}

fn weight_from_excess(lambda: f64) -> f64 {
    if lambda > 0.0 {
        1.0 / (1.0 + lambda)
    } else {
        1.0
    }
}

fn global_weight(p0_bar: f64) -> f64 {
    if p0_bar > 0.0 {
        (1.0 / p0_bar).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Bayes-empirical-Bayes estimate `rho m0 + (1 - rho) m~`; the variance is
/// that of the Gamma posterior with the implied `w0`, `mean (1 - rho) / s0`.
pub fn poisson_eb_estimate(stats: PoissonLocalStats, m0: f64, pooling: PoissonPooling) -> Result<PoissonEstimate> {
    let p0 = poisson_p0(stats, m0)?;
    let rho = match pooling {
        PoissonPooling::Local => weight_from_excess(p0 - stats.t0 / stats.s0),
        PoissonPooling::Global { p0_bar } => global_weight(p0_bar),
    };
    let mean = shrink(rho, m0, stats.m_tilde()?);
    Ok(PoissonEstimate {
        mean,
        prior_weight: rho,
        variance: mean * (1.0 - rho) / stats.s0,
    })
}

/// One cell for pooled Poisson estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonCell {
    pub midpoint: f64,
    pub stats: PoissonLocalStats,
    pub m0: f64,
}

/// Cells with positive weight, with `m0` evaluated at midpoints.
pub fn poisson_cells(cells: &[CellFit], m0: impl Fn(f64) -> f64) -> Vec<PoissonCell> {
    cells
        .iter()
        .filter(|c| c.s0() > 0.0)
        .map(|c| PoissonCell {
            midpoint: c.midpoint,
            stats: PoissonLocalStats::from_design(&c.design),
            m0: m0(c.midpoint),
        })
        .collect()
}

/// `k^{-1} Σ P0` over cells.
pub fn mean_p0(cells: &[PoissonCell]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::NoInformation);
    }
    let mut total = 0.0;
    for c in cells {
        total += poisson_p0(c.stats, c.m0)?;
    }
    Ok(total / cells.len() as f64)
}

/// Index of the constant term, if the basis has one.
fn constant_index(basis: &LinearBasis) -> Option<usize> {
    basis.terms().iter().position(|t| matches!(t, BasisTerm::Constant))
}

/// Maximum likelihood for Poisson counts with mean `exp(xi' z(x))`.
///
/// Newton's method with step halving from `xi = (log(ybar + 1/2), 0, ...)`.
pub fn loglinear_mle(data: &Dataset, basis: &LinearBasis) -> Result<Vector> {
    check_counts(data)?;
    let n = data.len();
    let p = basis.len();
    if n < p {
        return Err(Error::TooFewPoints { needed: p, have: n });
    }
    if data.ys().iter().all(|&y| y == 0.0) {
        return Err(Error::invalid("y", "all counts are zero"));
    }
    let zs: Vec<Vector> = (0..n).map(|i| basis.eval(data.x(i))).collect();
    let ys = data.ys();
    let loglik = |xi: &Vector| -> f64 {
        zs.iter()
            .zip(ys)
            .map(|(z, &y)| {
                let eta = z.dot(xi);
                y * eta - libm::exp(eta)
            })
            .sum()
    };
    let mut xi = Vector::zeros(p);
    if let Some(j) = constant_index(basis) {
        xi[j] = libm::log(data.mean_y() + 0.5);
    }
    let mut current = loglik(&xi);
    for _ in 0..MAX_NEWTON_STEPS {
        let mut grad = Vector::zeros(p);
        let mut info = Mat::zeros(p, p);
        for (z, &y) in zs.iter().zip(ys) {
            let mu = libm::exp(z.dot(&xi));
            grad += z * (y - mu);
            info += z * z.transpose() * mu;
        }
        let step = linalg::solve(&info, &grad, "Poisson information")?;
        let mut t = 1.0;
        let mut next = &xi + &step;
        let mut value = loglik(&next);
        while !(value >= current) && t > 1e-10 {
            t *= 0.5;
            next = &xi + &step * t;
            value = loglik(&next);
        }
        if !value.is_finite() || next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let moved = (&next - &xi).norm();
        xi = next;
        current = value;
        if moved <= 1e-12 * (1.0 + xi.norm()) {
            return Ok(xi);
        }
    }
    Err(Error::NoConvergence(MAX_NEWTON_STEPS))
}

/// Score `Σ (y - exp(xi'z)) z`.
pub fn loglinear_score(data: &Dataset, basis: &LinearBasis, xi: &Vector) -> Vector {
    data.pairs().fold(Vector::zeros(basis.len()), |acc, (x, y)| {
        let z = basis.eval(x);
        let mu = libm::exp(z.dot(xi));
        acc + z * (y - mu)
    })
}

/// `V~ = J^{-1} K J^{-1}` with `J = n^{-1} Σ e^{xi'z} z z'` and
/// `K = n^{-1} Σ (y - e^{xi'z})^2 z z'`; valid when the counts are Poisson
/// whatever the true mean function.
pub fn loglinear_sandwich(data: &Dataset, basis: &LinearBasis, xi: &Vector) -> Result<Mat> {
    let p = basis.len();
    let n = data.len() as f64;
    let mut j = Mat::zeros(p, p);
    let mut k = Mat::zeros(p, p);
    for (x, y) in data.pairs() {
        let z = basis.eval(x);
        let mu = libm::exp(z.dot(xi));
        let zz = &z * z.transpose();
        j += &zz * mu;
        k += zz * ((y - mu) * (y - mu));
    }
    let j_inv = linalg::inverse(&(j / n), "Poisson information")?;
    Ok(linalg::symmetrize(&(&j_inv * (k / n) * &j_inv)))
}

/// Approximate posterior `N(xi~, V~/n)` of a log-linear start curve; the
/// start curve is `exp` of the basis value.
pub fn loglinear_start_posterior(data: &Dataset, basis: LinearBasis) -> Result<StartCurvePosterior> {
    let xi_hat = loglinear_mle(data, &basis)?;
    let cov = loglinear_sandwich(data, &basis, &xi_hat)? / data.len() as f64;
    Ok(StartCurvePosterior { basis, xi_hat, cov })
}

/// `exp(xi' z(x))`
pub fn loglinear_value(basis: &LinearBasis, xi: &Vector, x: f64) -> f64 {
    libm::exp(basis.value(xi, x))
}

/// Prior for the local log-slope `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlopePrior {
    Normal { mean: f64, sd: f64 },
    /// Flat on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl SlopePrior {
    /// `N(0, (2/h)^2)`: a slope that changes the mean by a factor `e` over
    /// half a window is one standard deviation.
    pub fn for_bandwidth(h: f64) -> Self {
        SlopePrior::Normal { mean: 0.0, sd: 2.0 / h }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            SlopePrior::Normal { mean, sd } => (mean - SLOPE_GRID_SDS * sd, mean + SLOPE_GRID_SDS * sd),
            SlopePrior::Uniform { lo, hi } => (lo, hi),
        }
    }

    fn log_density(&self, b: f64) -> f64 {
        match *self {
            SlopePrior::Normal { mean, sd } => {
                let z = (b - mean) / sd;
                -0.5 * z * z
            }
            SlopePrior::Uniform { .. } => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SlopePrior::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            SlopePrior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("slope prior", "needs a proper, bounded prior"))
        }
    }
}

/// Local log-linear posterior on the slope grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopePosterior {
    pub grid: Vec<f64>,
    /// Normalized by the trapezoid rule on `grid`.
    pub density: Vec<f64>,
    /// Posterior mean of `m(x) = a`.
    pub level: f64,
    /// Posterior mean of `b`.
    pub slope: f64,
    /// Posterior variance of `a`.
    pub level_variance: f64,
}

fn trapezoid_weights(len: usize, step: f64) -> impl Iterator<Item = f64> {
    (0..len).map(move |i| if i == 0 || i + 1 == len { 0.5 * step } else { step })
}

/// Local model `m(t) = a exp{b (t - x)}` with `a ~ Gamma(w0 m0, w0)` and
/// `b ~ prior`.
///
/// The posterior of `b` is proportional to
/// `prior(b) exp(b Σ w dx y) / (w0 + Σ w e^{b dx})^{w0 m0 + Σ w y}`, and the
/// estimate of `m(x)` averages `(w0 m0 + Σ w y) / (w0 + Σ w e^{b dx})` over it.
pub fn loglinear_local_posterior(design: &LocalDesign, m0: f64, w0: f64, prior: SlopePrior) -> Result<SlopePosterior> {
    prior.validate()?;
    if !(w0 >= 0.0 && w0.is_finite() && m0 >= 0.0 && m0.is_finite()) {
        return Err(Error::invalid("w0, m0", "must be finite and nonnegative"));
    }
    if !(w0 + design.s0() > 0.0) {
        return Err(Error::NoInformation);
    }
    let shape = w0 * m0 + design.sy(0);
    let wdxy: f64 = design.points().iter().map(|p| p.w * p.dx * p.y).sum();
    let rate = |b: f64| w0 + design.points().iter().map(|p| p.w * libm::exp(b * p.dx)).sum::<f64>();

    let (lo, hi) = prior.range();
    let len = SLOPE_GRID_POINTS;
    let step = (hi - lo) / (len - 1) as f64;
    let grid: Vec<f64> = (0..len).map(|i| lo + i as f64 * step).collect();
    let rates: Vec<f64> = grid.iter().map(|&b| rate(b)).collect();
    let log_post: Vec<f64> = grid
        .iter()
        .zip(&rates)
        .map(|(&b, &r)| prior.log_density(b) + b * wdxy - shape * libm::log(r))
        .collect();
    let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::invalid("slope prior", "posterior is not finite on the grid"));
    }
    let mut density: Vec<f64> = log_post.iter().map(|&l| libm::exp(l - top)).collect();
    let total: f64 = density.iter().zip(trapezoid_weights(len, step)).map(|(d, w)| d * w).sum();
    for d in &mut density {
        *d /= total;
    }

    let masses: Vec<f64> = density.windows(2).map(|d| 0.5 * (d[0] + d[1]) * step).collect();
    let edge: f64 = masses[..EDGE_INTERVALS].iter().chain(&masses[masses.len() - EDGE_INTERVALS..]).sum();
    if edge > EDGE_MASS {
        return Err(Error::GridTooSmall { mass: edge });
    }

    let (mut level, mut second, mut slope) = (0.0, 0.0, 0.0);
    for (((&b, &r), &d), w) in grid.iter().zip(&rates).zip(&density).zip(trapezoid_weights(len, step)) {
        let mean_a = shape / r;
        level += w * d * mean_a;
        second += w * d * (mean_a * mean_a + shape / (r * r));
        slope += w * d * b;
    }
    Ok(SlopePosterior {
        grid,
        density,
        level,
        slope,
        level_variance: (second - level * level).max(0.0),
    })
}

/// Summaries for the start-curve-times-correction model `m(t) = m0(t) a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonMultStats {
    pub wy: f64,
    /// `U = Σ w m0(x_i)`
    pub u: f64,
    /// `Σ w^2 m0(x_i)`
    pub u2: f64,
    /// `m0(x)`
    pub m0_x: f64,
}

impl PoissonMultStats {
    pub fn from_design(design: &LocalDesign, m0: impl Fn(f64) -> f64) -> Result<Self> {
        let m0_x = m0(design.x());
        if !(m0_x > 0.0) {
            return Err(Error::invalid("m0", "start curve must be positive"));
        }
        let (mut u, mut u2) = (0.0, 0.0);
        for p in design.points() {
            let v = m0(design.x() + p.dx);
            if !(v > 0.0) {
                return Err(Error::invalid("m0", "start curve must be positive"));
            }
            u += p.w * v;
            u2 += p.w * p.w * v;
        }
        Ok(PoissonMultStats {
            wy: design.sy(0),
            u,
            u2,
            m0_x,
        })
    }

    /// Noninformative correction `Σ w y / Σ w m0(x_i)`.
    pub fn a_bar(&self) -> Result<f64> {
        if !(self.u > 0.0) {
            return Err(Error::EmptyNeighbourhood);
        }
        Ok(self.wy / self.u)
    }

    /// `P0 = U (a_bar - 1)^2`, with mean `Σ w^2 m0 / U + U / w0`.
    pub fn p0(&self) -> Result<f64> {
        let d = self.a_bar()? - 1.0;
        Ok(self.u * d * d)
    }
}

/// Posterior `Gamma(w0 + Σ w y, w0 + U)` of the correction factor under the
/// `Gamma(w0, w0)` prior.
pub fn poisson_mult_posterior(stats: PoissonMultStats, w0: f64) -> Result<GammaPosterior> {
    if !(w0 >= 0.0) || w0.is_infinite() {
        return Err(Error::invalid("w0", "must be finite and nonnegative"));
    }
    let rate = w0 + stats.u;
    if !(rate > 0.0) {
        return Err(Error::NoInformation);
    }
    Ok(GammaPosterior {
        shape: w0 + stats.wy,
        rate,
    })
}

/// `m0(x) (w0 + Σ w y) / (w0 + Σ w m0(x_i))`
pub fn poisson_mult_estimate(stats: PoissonMultStats, w0: f64) -> Result<f64> {
    Ok(stats.m0_x * poisson_mult_posterior(stats, w0)?.mean())
}

/// Empirical-Bayes version: `U / w0 = P0 - Σ w^2 m0 / U`, a nonpositive
/// right side giving the start curve itself; the global mode puts weight
/// `1 / P0bar` on the start curve.
pub fn poisson_mult_eb_estimate(stats: PoissonMultStats, pooling: PoissonPooling) -> Result<PoissonEstimate> {
    let a_bar = stats.a_bar()?;
    let rho = match pooling {
        PoissonPooling::Local => weight_from_excess(stats.p0()? - stats.u2 / stats.u),
        PoissonPooling::Global { p0_bar } => global_weight(p0_bar),
    };
    let a = shrink(rho, 1.0, a_bar);
    Ok(PoissonEstimate {
        mean: stats.m0_x * a,
        prior_weight: rho,
        variance: stats.m0_x * stats.m0_x * a * (1.0 - rho) / stats.u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::fit_cells;
    use crate::data::partition_cells;
    use crate::kernel::Kernel;
    use crate::local_fit::local_design;
    use crate::testutil::{poisson, simpson};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn stats(s0: f64, t0: f64, wy: f64) -> PoissonLocalStats {
        PoissonLocalStats { s0, t0, wy }
    }

    fn count_data(n: usize, seed: u64, mean: impl Fn(f64) -> f64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let ys = xs.iter().map(|&x| poisson(&mut rng, mean(x))).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn flat_prior_gives_local_mle() {
        let st = stats(4.0, 4.0, 10.0);
        let post = poisson_level_posterior(GammaPrior::centred(7.0, 0.0), st).unwrap();
        assert!((post.mean() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn no_local_data_returns_prior_mean() {
        let post = poisson_level_posterior(GammaPrior::centred(3.0, 2.0), stats(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(post.mean(), 3.0);
        let none = poisson_level_posterior(GammaPrior::centred(3.0, 0.0), stats(0.0, 0.0, 0.0));
        assert_eq!(none, Err(Error::NoInformation));
    }

    #[test]
    fn level_posterior_matches_quadrature() {
        let mut rng = ChaCha20Rng::seed_from_u64(71);
        for _ in 0..20 {
            let m0: f64 = rng.random_range(0.5..6.0);
            let w0 = rng.random_range(1.0..8.0) / m0.min(1.0);
            let n = rng.random_range(1..12);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.05..1.0), poisson(&mut rng, 3.0)))
                .collect();
            let shape0 = w0 * m0;
            // log of prior density times weighted Poisson likelihood, up to constants
            let log_joint = |a: f64| {
                let mut l = (shape0 - 1.0) * libm::log(a) - w0 * a;
                for &(w, y) in &pts {
                    l += w * (y * libm::log(a) - a);
                }
                l
            };
            let s0: f64 = pts.iter().map(|p| p.0).sum();
            let wy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let guess = (shape0 + wy) / (w0 + s0);
            let top = log_joint(guess);
            let hi = guess * 12.0 + 20.0;
            let num = simpson(|a| if a > 0.0 { a * libm::exp(log_joint(a) - top) } else { 0.0 }, 0.0, hi, 200_000);
            let den = simpson(|a| if a > 0.0 { libm::exp(log_joint(a) - top) } else { 0.0 }, 0.0, hi, 200_000);
            let closed = poisson_level_posterior(GammaPrior::centred(m0, w0), stats(s0, 0.0, wy)).unwrap();
            assert!((num / den - closed.mean()).abs() < 1e-6 * closed.mean().max(1.0), "{} {}", num / den, closed.mean());
        }
    }

    #[test]
    fn eb_perfect_fit_returns_m0() {
        let est = poisson_eb_estimate(stats(5.0, 5.0, 10.0), 2.0, PoissonPooling::Local).unwrap();
        assert_eq!(est.mean, 2.0);
        assert_eq!(est.prior_weight, 1.0);
        assert_eq!(poisson_eb_w0(stats(5.0, 5.0, 10.0), 2.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn eb_local_weight_formula() {
        // uniform kernel: t0/s0 = 1, weight 1/(1 + P0 - 1) = 1/P0
        let st = stats(10.0, 10.0, 50.0);
        let m0 = 2.0;
        let p0 = poisson_p0(st, m0).unwrap();
        assert!((p0 - 45.0).abs() < 1e-12);
        let est = poisson_eb_estimate(st, m0, PoissonPooling::Local).unwrap();
        assert!((est.prior_weight - 1.0 / p0).abs() < 1e-15);
        let w0 = poisson_eb_w0(st, m0).unwrap();
        let direct = poisson_level_posterior(GammaPrior::centred(m0, w0), st).unwrap();
        assert!((direct.mean() - est.mean).abs() < 1e-12);
        assert!((direct.variance() - est.variance).abs() < 1e-12);
    }

    #[test]
    fn eb_global_weight_truncated() {
        let st = stats(10.0, 10.0, 30.0);
        let est = poisson_eb_estimate(st, 2.0, PoissonPooling::Global { p0_bar: 0.5 }).unwrap();
        assert_eq!(est.prior_weight, 1.0);
        let est = poisson_eb_estimate(st, 2.0, PoissonPooling::Global { p0_bar: 4.0 }).unwrap();
        assert!((est.mean - (0.25 * 2.0 + 0.75 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_and_epanechnikov_weight_ratios() {
        let n = 2000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let data = Dataset::new(xs, vec![1.0; n]).unwrap();
        let uni = PoissonLocalStats::from_design(&local_design(&data, 0.5, 0.2, Kernel::Uniform, 0));
        assert!((uni.t0 / uni.s0 - 1.0).abs() < 1e-15);
        let epa = PoissonLocalStats::from_design(&local_design(&data, 0.5, 0.2, Kernel::Epanechnikov, 0));
        assert!((epa.t0 / epa.s0 - 0.8).abs() < 0.02);
    }

    #[test]
    fn mean_p0_over_cells() {
        let data = count_data(200, 3, |_| 4.0);
        let part = partition_cells(&data, 5).unwrap();
        let cells = poisson_cells(&fit_cells(&data, &part, Kernel::Uniform, 0), |_| 4.0);
        assert_eq!(cells.len(), 5);
        let direct: f64 = cells.iter().map(|c| poisson_p0(c.stats, 4.0).unwrap()).sum::<f64>() / 5.0;
        assert!((mean_p0(&cells).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn constant_basis_mle_is_log_mean() {
        let data = count_data(150, 5, |x| 2.0 + x);
        let xi = loglinear_mle(&data, &LinearBasis::constant()).unwrap();
        assert!((xi[0] - libm::log(data.mean_y())).abs() < 1e-12);
    }

    #[test]
    fn mle_is_stationary() {
        let data = count_data(300, 9, |x| libm::exp(0.3 + 1.2 * x - 0.8 * x * x));
        for degree in 1..=2 {
            let basis = LinearBasis::polynomial(&data, degree).unwrap();
            let xi = loglinear_mle(&data, &basis).unwrap();
            assert!(loglinear_score(&data, &basis, &xi).norm() < 1e-8);
        }
    }

    #[test]
    fn mle_rejects_non_counts() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.5, 3.0]).unwrap();
        assert!(loglinear_mle(&data, &LinearBasis::constant()).is_err());
        let zeros = Dataset::new(vec![0.0, 1.0, 2.0], vec![0.0; 3]).unwrap();
        assert!(loglinear_mle(&zeros, &LinearBasis::constant()).is_err());
    }

    #[test]
    fn sandwich_matches_inverse_fisher_when_model_holds() {
        let data = count_data(5000, 21, |x| libm::exp(0.5 + 1.0 * x));
        let basis = LinearBasis::polynomial(&data, 1).unwrap();
        let xi = loglinear_mle(&data, &basis).unwrap();
        let v = loglinear_sandwich(&data, &basis, &xi).unwrap();
        let n = data.len() as f64;
        let j = data.pairs().fold(Mat::zeros(2, 2), |acc, (x, _)| {
            let z = basis.eval(x);
            acc + &z * z.transpose() * libm::exp(z.dot(&xi))
        }) / n;
        let fisher_inv = linalg::inverse(&j, "J").unwrap();
        let rel = (&v - &fisher_inv).norm() / fisher_inv.norm();
        let spectral = |m: &Mat| m.clone().symmetric_eigen().eigenvalues.amax();
        assert!(spectral(&(&v - &fisher_inv)) / spectral(&fisher_inv) < 0.15, "relative {rel}");
    }

    #[test]
    fn start_posterior_uses_exp_link() {
        let data = count_data(400, 4, |x| libm::exp(1.0 + 0.5 * x));
        let basis = LinearBasis::polynomial(&data, 1).unwrap();
        let post = loglinear_start_posterior(&data, basis).unwrap();
        let m = loglinear_value(&post.basis, &post.xi_hat, 0.5);
        assert!((m - libm::exp(1.25)).abs() < 0.4);
        assert!(post.cov[(0, 0)] > 0.0);
    }

    fn design_from(x: f64, pts: &[(f64, f64, f64)]) -> LocalDesign {
        LocalDesign::from_weighted(x, 1.0, 0, pts.iter().copied())
    }

    #[test]
    fn coincident_points_leave_slope_prior_unchanged() {
        let d = design_from(0.3, &[(0.3, 4.0, 1.0), (0.3, 2.0, 0.5)]);
        let prior = SlopePrior::Normal { mean: 0.0, sd: 1.5 };
        let post = loglinear_local_posterior(&d, 2.0, 1.0, prior).unwrap();
        let step = post.grid[1] - post.grid[0];
        for (&b, &dens) in post.grid.iter().zip(&post.density) {
            let exact = libm::exp(-0.5 * (b / 1.5) * (b / 1.5)) / (1.5 * libm::sqrt(2.0 * core::f64::consts::PI));
            assert!((dens - exact).abs() < 1e-6 + 1e-4 * exact * step, "{b}");
        }
        assert!(post.slope.abs() < 1e-12);
    }

    #[test]
    fn symmetric_design_gives_symmetric_slope_posterior() {
        let pts: Vec<(f64, f64, f64)> = (-5..=5).map(|i| (i as f64 * 0.05, 3.0, 1.0)).collect();
        let d = design_from(0.0, &pts);
        let post = loglinear_local_posterior(&d, 3.0, 2.0, SlopePrior::Uniform { lo: -20.0, hi: 20.0 }).unwrap();
        let n = post.density.len();
        for i in 0..n {
            assert!((post.density[i] - post.density[n - 1 - i]).abs() < 1e-9);
        }
        assert!(post.slope.abs() < 1e-9);
    }

    #[test]
    fn single_point_reduces_to_level_answer() {
        let d = design_from(0.0, &[(0.0, 5.0, 1.0)]);
        let post = loglinear_local_posterior(&d, 2.0, 3.0, SlopePrior::for_bandwidth(0.1)).unwrap();
        assert!((post.level - (3.0 * 2.0 + 5.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn slope_posterior_normalized() {
        let data = count_data(200, 8, |x| libm::exp(1.0 + 2.0 * x));
        let d = local_design(&data, 0.5, 0.3, Kernel::Epanechnikov, 0);
        let post = loglinear_local_posterior(&d, 4.0, 5.0, SlopePrior::for_bandwidth(0.3)).unwrap();
        let step = post.grid[1] - post.grid[0];
        let mass: f64 = post.density.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
        assert!((mass - 1.0).abs() < 1e-6);
        assert!(post.slope > 0.0);
        assert!(post.level > 0.0 && post.level_variance > 0.0);
    }

    #[test]
    fn narrow_slope_prior_range_is_reported() {
        let pts: Vec<(f64, f64, f64)> = (0..20).map(|i| (i as f64 * 0.05, libm::round(libm::exp(0.2 * i as f64)), 1.0)).collect();
        let d = design_from(0.5, &pts);
        let err = loglinear_local_posterior(&d, 3.0, 1.0, SlopePrior::Uniform { lo: -1.0, hi: 1.0 });
        assert!(matches!(err, Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn mult_constant_start_gives_nw() {
        let data = count_data(100, 2, |_| 3.0);
        let d = local_design(&data, 0.5, 0.3, Kernel::Epanechnikov, 0);
        let st = PoissonMultStats::from_design(&d, |_| 2.5).unwrap();
        let est = poisson_mult_estimate(st, 0.0).unwrap();
        assert!((est - d.sy(0) / d.s0()).abs() < 1e-12);
    }

    #[test]
    fn mult_exact_start_gives_start() {
        let pts: Vec<(f64, f64, f64)> = (0..6).map(|i| (i as f64, (i + 1) as f64, 1.0)).collect();
        let d = LocalDesign::from_weighted(2.0, 10.0, 0, pts);
        let st = PoissonMultStats::from_design(&d, |x| x + 1.0).unwrap();
        assert!((st.a_bar().unwrap() - 1.0).abs() < 1e-15);
        assert!((poisson_mult_estimate(st, 0.0).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn mult_posterior_matches_quadrature() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w0 = rng.random_range(1.0..10.0);
            let pts: Vec<(f64, f64, f64)> = (0..rng.random_range(1..10))
                .map(|_| (rng.random_range(0.0..1.0), poisson(&mut rng, 2.0), rng.random_range(0.1..1.0)))
                .collect();
            let m0 = |x: f64| 1.0 + x * x;
            let d = LocalDesign::from_weighted(0.5, 1.0, 0, pts.iter().copied());
            let st = PoissonMultStats::from_design(&d, m0).unwrap();
            let log_joint = |a: f64| {
                let mut l = (w0 - 1.0) * libm::log(a) - w0 * a;
                for &(x, y, w) in &pts {
                    let mu = m0(x) * a;
                    l += w * (y * libm::log(mu) - mu);
                }
                l
            };
            let top = log_joint(1.0);
            let num = simpson(|a| if a > 0.0 { a * libm::exp(log_joint(a) - top) } else { 0.0 }, 0.0, 40.0, 200_000);
            let den = simpson(|a| if a > 0.0 { libm::exp(log_joint(a) - top) } else { 0.0 }, 0.0, 40.0, 200_000);
            let closed = poisson_mult_estimate(st, w0).unwrap();
            assert!((m0(0.5) * num / den - closed).abs() < 1e-6, "{} {}", m0(0.5) * num / den, closed);
        }
    }

    #[test]
    fn mult_eb_limits() {
        let pts: Vec<(f64, f64, f64)> = (0..6).map(|i| (i as f64, (i + 1) as f64, 1.0)).collect();
        let d = LocalDesign::from_weighted(2.0, 10.0, 0, pts);
        let st = PoissonMultStats::from_design(&d, |x| x + 1.0).unwrap();
        let est = poisson_mult_eb_estimate(st, PoissonPooling::Local).unwrap();
        assert_eq!(est.prior_weight, 1.0);
        assert!((est.mean - 3.0).abs() < 1e-14);
        let far = PoissonMultStats { wy: 63.0, ..st };
        let est = poisson_mult_eb_estimate(far, PoissonPooling::Local).unwrap();
        let lambda = far.p0().unwrap() - 1.0;
        assert!((est.prior_weight - 1.0 / (1.0 + lambda)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn conjugate_updates_compose(
            m0 in 0.1f64..10.0, w0 in 0.0f64..20.0,
            a in proptest::collection::vec(0u32..20, 1..10),
            b in proptest::collection::vec(0u32..20, 1..10),
        ) {
            let sum = |v: &[u32]| v.iter().map(|&y| y as f64).sum::<f64>();
            let first = stats(a.len() as f64, a.len() as f64, sum(&a));
            let second = stats(b.len() as f64, b.len() as f64, sum(&b));
            let union = stats(first.s0 + second.s0, 0.0, first.wy + second.wy);
            let prior = GammaPrior::centred(m0, w0);
            let step = poisson_level_posterior(prior, first).unwrap();
            let two = poisson_level_posterior(GammaPrior { shape: step.shape, rate: step.rate }, second).unwrap();
            let one = poisson_level_posterior(prior, union).unwrap();
            prop_assert!((two.shape - one.shape).abs() < 1e-9 && (two.rate - one.rate).abs() < 1e-12);
        }

        #[test]
        fn posterior_mean_between_prior_and_mle(
            m0 in 0.1f64..10.0, w0 in 0.0f64..20.0, s0 in 0.1f64..30.0, wy in 0.0f64..100.0,
        ) {
            let mean = poisson_level_posterior(GammaPrior::centred(m0, w0), stats(s0, s0, wy)).unwrap().mean();
            let mt = wy / s0;
            prop_assert!(mean >= m0.min(mt) - 1e-12 && mean <= m0.max(mt) + 1e-12);
        }

        #[test]
        fn eb_estimate_between_prior_and_mle(m0 in 0.1f64..10.0, s0 in 0.5f64..30.0, wy in 0.0f64..100.0) {
            let st = stats(s0, s0, wy);
            let est = poisson_eb_estimate(st, m0, PoissonPooling::Local).unwrap();
            let mt = wy / s0;
            prop_assert!(est.mean >= m0.min(mt) - 1e-12 && est.mean <= m0.max(mt) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&est.prior_weight));
        }
    }
}
