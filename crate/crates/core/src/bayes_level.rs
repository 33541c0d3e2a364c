//! The local-constant normal model: conjugate posterior for the local level,
//! empirical-Bayes estimates of the residual scale and the prior precision,
//! pooled shrinkage variants, the Stein estimator, Gamma-prior inference for
//! the residual scale and t credible intervals.

use alloc::vec::Vec;

use crate::cells::CellFit;
use crate::linalg::{self, Mat, Vector};
use crate::local_fit::{nw_fit, LocalDesign};
use crate::special::t_quantile;
use crate::{Error, Result};

/// Local prior for the level: mean `m0` and precision `w0` (variance `sigma^2 / w0`).
/// `w0 = f64::INFINITY` pins the level at `m0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPrior {
    pub m0: f64,
    pub w0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPosterior {
    pub mean: f64,
    /// `w0 + s0`; the posterior variance is `sigma^2 / precision`.
    pub precision: f64,
    /// Weight `w0 / (w0 + s0)` placed on the prior mean.
    pub rho: f64,
}

/// Residual-scale estimate with its degrees of freedom and the Gamma prior
/// `(alpha/2, beta/2)` on `1/sigma^2` behind it (zeros when noninformative).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaInference {
    pub sigma2: f64,
    pub dof: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Posterior mean `(w0 m0 + s0 m~) / (w0 + s0)` where `m~` is the NW estimate.
pub fn level_posterior(prior: LevelPrior, design: &LocalDesign) -> Result<LevelPosterior> {
    if !(prior.w0 >= 0.0) || !prior.m0.is_finite() {
        return Err(Error::invalid("prior", "needs w0 >= 0 and a finite m0"));
    }
    let s0 = design.s0();
    if prior.w0.is_infinite() {
        return Ok(LevelPosterior {
            mean: prior.m0,
            precision: f64::INFINITY,
            rho: 1.0,
        });
    }
    let precision = prior.w0 + s0;
    if !(precision > 0.0) {
        return Err(Error::NoInformation);
    }
    if s0 == 0.0 {
        return Ok(LevelPosterior {
            mean: prior.m0,
            precision,
            rho: 1.0,
        });
    }
    let m_tilde = nw_fit(design)?;
    let rho = prior.w0 / precision;
    Ok(LevelPosterior {
        mean: rho * prior.m0 + (1.0 - rho) * m_tilde,
        precision,
        rho,
    })
}

/// `sigma~^2 = Σ Q0 / Σ (s0 - (order + 1))` over the cells with a fit.
///
/// Cells with `s0 < order + 1` carry no residual information and are skipped.
pub fn pooled_sigma(cells: &[CellFit], order: usize) -> Result<SigmaInference> {
    let params = (order + 1) as f64;
    let mut q = 0.0;
    let mut dof = 0.0;
    for cell in cells {
        if let Some(fit) = &cell.fit {
            if cell.s0() >= params {
                q += fit.q0;
                dof += cell.s0() - params;
            }
        }
    }
    if !(dof > 0.0) {
        return Err(Error::NonpositiveDof);
    }
    Ok(SigmaInference {
        sigma2: q / dof,
        dof,
        alpha: 0.0,
        beta: 0.0,
    })
}

/// Prior-fit statistic `P0 = s0 (m~ - m0)^2`.
pub fn p0(design: &LocalDesign, m0: f64) -> Result<f64> {
    let d = nw_fit(design)? - m0;
    Ok(design.s0() * d * d)
}

/// `min(1, sigma~^2 / P0)`; one when `P0 <= sigma~^2`, including `P0 = 0`.
pub fn local_rho(sigma: &SigmaInference, design: &LocalDesign, m0: f64) -> Result<f64> {
    Ok(rho_from_p0(sigma.sigma2, p0(design, m0)?))
}

fn rho_from_p0(sigma2: f64, p0: f64) -> f64 {
    if p0 <= sigma2 {
        1.0
    } else {
        sigma2 / p0
    }
}

/// Empirical-Bayes level estimate `m~ - (sigma~^2 / s0) / (m~ - m0)`, or `m0`
/// when the prior fits to within noise (`P0 <= sigma~^2`).
pub fn eb_level_estimate(sigma: &SigmaInference, design: &LocalDesign, m0: f64) -> Result<f64> {
    let m_tilde = nw_fit(design)?;
    let d = m_tilde - m0;
    if design.s0() * d * d <= sigma.sigma2 {
        return Ok(m0);
    }
    Ok(m_tilde - (sigma.sigma2 / design.s0()) / d)
}

/// Optional post-smoothing of local prior weights: centred moving average of
/// width three, truncated at the ends.
pub fn smooth_rhos(rhos: &[f64]) -> Vec<f64> {
    let n = rhos.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            rhos[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// What the pooled estimators need from one cell: its local sample size,
/// level estimate, residual sum and the start-curve value at its midpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSummary {
    pub midpoint: f64,
    pub s0: f64,
    pub m_tilde: f64,
    pub q0: f64,
    pub m0: f64,
}

impl CellSummary {
    pub fn p0(&self) -> f64 {
        let d = self.m_tilde - self.m0;
        self.s0 * d * d
    }
}

/// Summaries of the cells that have a fit, with `m0` evaluated at midpoints.
pub fn cell_summaries(cells: &[CellFit], m0: impl Fn(f64) -> f64) -> Vec<CellSummary> {
    cells
        .iter()
        .filter_map(|c| {
            c.fit.as_ref().map(|fit| CellSummary {
                midpoint: c.midpoint,
                s0: c.s0(),
                m_tilde: fit.level(),
                q0: fit.q0,
                m0: m0(c.midpoint),
            })
        })
        .collect()
}

/// `weight * m0 + (1 - weight) * m~`
pub fn shrink(weight: f64, m0: f64, m_tilde: f64) -> f64 {
    weight * m0 + (1.0 - weight) * m_tilde
}

/// Pooled prior weight `k sigma~^2 / Σ P0`, clamped to `[0, 1]`; a zero
/// denominator (perfect prior fit) gives weight one.
pub fn global_shrink_weight(sigma: &SigmaInference, cells: &[CellSummary]) -> f64 {
    let total: f64 = cells.iter().map(CellSummary::p0).sum();
    let k = cells.len() as f64;
    if !(total > 0.0) {
        return 1.0;
    }
    (k * sigma.sigma2 / total).clamp(0.0, 1.0)
}

pub fn global_shrink_estimate(sigma: &SigmaInference, cells: &[CellSummary], m0: f64, m_tilde: f64) -> f64 {
    shrink(global_shrink_weight(sigma, cells), m0, m_tilde)
}

/// Prior weight when the prior variance is `sigma^2 r(x) / w0` for a known
/// shape `r`: `1 / (1 + lambda)` with
/// `lambda = s0 r c^{-1} (P0bar / sigma~^2 - 1)`, `c = mean(s0 r)` over cells.
pub fn parametric_shrink_weight(
    sigma: &SigmaInference,
    cells: &[CellSummary],
    r: impl Fn(f64) -> f64,
    s0: f64,
    r_x: f64,
) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::NoInformation);
    }
    let k = cells.len() as f64;
    let mut p_bar = 0.0;
    let mut c = 0.0;
    for cell in cells {
        let rc = r(cell.midpoint);
        if !(rc > 0.0) {
            return Err(Error::invalid("r", "must be positive at every midpoint"));
        }
        p_bar += cell.p0();
        c += cell.s0 * rc;
    }
    if !(r_x > 0.0) {
        return Err(Error::invalid("r", "must be positive at x"));
    }
    p_bar /= k;
    c /= k;
    if p_bar <= sigma.sigma2 {
        return Ok(1.0);
    }
    let lambda = s0 * r_x / c * (p_bar / sigma.sigma2 - 1.0);
    Ok((1.0 / (1.0 + lambda)).clamp(0.0, 1.0))
}

/// Stein-type estimate `m~ - (k - 2) sigma~^2 (m~ - m0) / Σ P0`.
///
/// Not truncated. Returns `m0` when every cell fits the prior exactly.
pub fn stein_estimate(sigma: &SigmaInference, cells: &[CellSummary], m0: f64, m_tilde: f64) -> f64 {
    let k = cells.len();
    if k < 3 {
        log::warn!("stein estimate with k = {k} cells; dominance needs k >= 3");
    }
    let total: f64 = cells.iter().map(CellSummary::p0).sum();
    if !(total > 0.0) {
        return m0;
    }
    m_tilde - (k as f64 - 2.0) * sigma.sigma2 * (m_tilde - m0) / total
}

/// Bayes estimate of `sigma^2` under a Gamma `(alpha/2, beta/2)` prior on
/// `1/sigma^2`, with per-cell prior precisions `w0`:
/// `[beta + Σ Q0 + Σ w0 s0 (m~ - m0)^2 / (w0 + s0)] / (alpha + Σ s0)`.
///
/// The returned `dof` is `nu = alpha + Σ s0`, the t degrees of freedom.
pub fn sigma_bayes_gamma(alpha: f64, beta: f64, cells: &[CellSummary], w0: &[f64]) -> Result<SigmaInference> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::invalid("alpha, beta", "must be nonnegative"));
    }
    if w0.len() != cells.len() {
        return Err(Error::invalid("w0", "needs one precision per cell"));
    }
    let mut num = beta;
    let mut den = alpha;
    for (cell, &w) in cells.iter().zip(w0) {
        let d = cell.m_tilde - cell.m0;
        let factor = if w.is_infinite() {
            cell.s0
        } else if w + cell.s0 > 0.0 {
            w * cell.s0 / (w + cell.s0)
        } else {
            0.0
        };
        num += cell.q0 + factor * d * d;
        den += cell.s0;
    }
    if !(den > 0.0) {
        return Err(Error::NoInformation);
    }
    Ok(SigmaInference {
        sigma2: num / den,
        dof: den,
        alpha,
        beta,
    })
}

/// Pointwise credible interval `mean ± precision^{-1/2} sigma t_{nu,(1+level)/2}`.
pub fn level_credible_interval(posterior: &LevelPosterior, sigma: &SigmaInference, level: f64) -> Result<(f64, f64)> {
    let half = credible_half_width(posterior.precision, sigma, level)?;
    Ok((posterior.mean - half, posterior.mean + half))
}

/// Half width of a t band for a posterior with the given precision.
pub fn credible_half_width(precision: f64, sigma: &SigmaInference, level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::invalid("level", "must lie in [0, 1)"));
    }
    if !(sigma.dof > 0.0) {
        return Err(Error::NonpositiveDof);
    }
    if precision.is_infinite() {
        return Ok(0.0);
    }
    let t = t_quantile(0.5 * (1.0 + level), sigma.dof)?;
    Ok(libm::sqrt(sigma.sigma2 / precision) * t)
}

/// Joint posterior means at the midpoints under a correlated normal prior
/// with precision `sigma^{-2} T0`: `(T0 + D)^{-1} (T0 m0 + D m~)` with
/// `D = diag(s0)`.
pub fn correlated_prior_posterior(t0: &Mat, m0: &[f64], s0: &[f64], m_tilde: &[f64]) -> Result<Vec<f64>> {
    let k = m0.len();
    if t0.nrows() != k || t0.ncols() != k || s0.len() != k || m_tilde.len() != k {
        return Err(Error::invalid("t0", "dimensions must match the number of cells"));
    }
    let a = t0 + Mat::from_diagonal(&Vector::from_column_slice(s0));
    let data_term = Vector::from_fn(k, |i, _| if s0[i] > 0.0 { s0[i] * m_tilde[i] } else { 0.0 });
    let rhs = t0 * Vector::from_column_slice(m0) + data_term;
    Ok(linalg::solve(&a, &rhs, "T0 + D")?.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::fit_cells;
    use crate::data::partition_cells;
    use crate::kernel::Kernel;
    use crate::local_fit::local_design;
    use crate::Dataset;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn design(xs: &[f64], ys: &[f64], x: f64, h: f64, kernel: Kernel) -> LocalDesign {
        local_design(&Dataset::new(xs.to_vec(), ys.to_vec()).unwrap(), x, h, kernel, 0)
    }

    fn sigma(s2: f64) -> SigmaInference {
        SigmaInference {
            sigma2: s2,
            dof: 10.0,
            alpha: 0.0,
            beta: 0.0,
        }
    }

    fn summary(s0: f64, m_tilde: f64, m0: f64) -> CellSummary {
        CellSummary {
            midpoint: 0.0,
            s0,
            m_tilde,
            q0: 1.0,
            m0,
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn flat_prior_gives_nw() {
        let d = design(&[0.1, 0.2, 0.35], &[1.0, 5.0, 2.0], 0.2, 0.4, Kernel::Epanechnikov);
        let post = level_posterior(LevelPrior { m0: 100.0, w0: 0.0 }, &d).unwrap();
        assert_eq!(post.mean, nw_fit(&d).unwrap());
        assert_eq!(post.rho, 0.0);
    }

    #[test]
    fn no_data_gives_prior() {
        let d = design(&[5.0], &[1.0], 0.0, 1.0, Kernel::Uniform);
        let post = level_posterior(LevelPrior { m0: 3.0, w0: 2.0 }, &d).unwrap();
        assert_eq!((post.mean, post.precision), (3.0, 2.0));
        assert_eq!(level_posterior(LevelPrior { m0: 3.0, w0: 0.0 }, &d), Err(Error::NoInformation));
    }

    #[test]
    fn equal_weights() {
        let d = design(&[0.0, 0.1], &[4.0, 4.0], 0.05, 1.0, Kernel::Uniform);
        let post = level_posterior(LevelPrior { m0: 0.0, w0: 2.0 }, &d).unwrap();
        assert_eq!((post.mean, post.rho), (2.0, 0.5));
    }

    #[test]
    fn infinite_precision_pins() {
        let d = design(&[0.0, 0.1], &[4.0, 4.0], 0.05, 1.0, Kernel::Uniform);
        let post = level_posterior(LevelPrior { m0: 1.0, w0: f64::INFINITY }, &d).unwrap();
        assert_eq!(post.mean, 1.0);
        let (lo, hi) = level_credible_interval(&post, &sigma(1.0), 0.9).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
    }

    #[test]
    fn posterior_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|_| 1.0 + rng.random::<f64>()).collect();
        let d = design(&xs, &ys, 0.5, 0.8, Kernel::Epanechnikov);
        for &(m0, w0, s2) in &[(0.0, 1.0, 0.5), (2.5, 4.0, 0.1), (-1.0, 0.3, 2.0)] {
            let log_post = |a: f64| {
                let lik: f64 = d.points().iter().map(|p| -p.w * (p.y - a).powi(2) / (2.0 * s2)).sum();
                lik - w0 * (a - m0).powi(2) / (2.0 * s2)
            };
            let peak = log_post(level_posterior(LevelPrior { m0, w0 }, &d).unwrap().mean);
            let z = simpson(|a| libm::exp(log_post(a) - peak), -10.0, 10.0, 20000);
            let m = simpson(|a| a * libm::exp(log_post(a) - peak), -10.0, 10.0, 20000) / z;
            let closed = level_posterior(LevelPrior { m0, w0 }, &d).unwrap().mean;
            assert!((m - closed).abs() < 1e-6, "{m} vs {closed}");
        }
    }

    #[test]
    fn large_window_is_textbook_conjugate_update() {
        let ys = [1.0, 2.5, 3.0, 0.5, 2.0];
        let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
        let d = design(&xs, &ys, 0.5, 100.0, Kernel::Uniform);
        let (m0, w0) = (0.0, 3.0);
        // prior N(m0, s^2/w0), n observations with variance s^2
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let textbook = (w0 * m0 + n * ybar) / (w0 + n);
        let post = level_posterior(LevelPrior { m0, w0 }, &d).unwrap();
        assert!((post.mean - textbook).abs() < 1e-14);
        assert_eq!(post.precision, w0 + n);
    }

    #[test]
    fn pooled_sigma_zero_for_constant_response() {
        let data = Dataset::new((0..20).map(|i| i as f64).collect(), alloc::vec![2.0; 20]).unwrap();
        let cells = fit_cells(&data, &partition_cells(&data, 4).unwrap(), Kernel::Epanechnikov, 0);
        assert_eq!(pooled_sigma(&cells, 0).unwrap().sigma2, 0.0);
    }

    #[test]
    fn pooled_sigma_single_cell_is_sample_variance() {
        let ys = [1.0, 4.0, 2.0, 8.0, 5.0];
        let data = Dataset::new(alloc::vec![0.0, 0.25, 0.5, 0.75, 1.0], ys.to_vec()).unwrap();
        let cells = fit_cells(&data, &partition_cells(&data, 1).unwrap(), Kernel::Uniform, 0);
        let mean = ys.iter().sum::<f64>() / 5.0;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 4.0;
        let s = pooled_sigma(&cells, 0).unwrap();
        assert!((s.sigma2 - var).abs() < 1e-12);
        assert_eq!(s.dof, 4.0);
    }

    #[test]
    fn pooled_sigma_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 500;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| if x < 0.5 { 1.0 } else { 2.0 } + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        let data = Dataset::new(xs, ys).unwrap();
        let cells = fit_cells(&data, &partition_cells(&data, 10).unwrap(), Kernel::Epanechnikov, 0);
        let s = pooled_sigma(&cells, 0).unwrap();
        assert!((s.sigma2 / 0.25 - 1.0).abs() < 0.15, "{}", s.sigma2);
    }

    #[test]
    fn pooled_sigma_needs_dof() {
        let data = Dataset::new(alloc::vec![0.0, 1.0], alloc::vec![1.0, 2.0]).unwrap();
        let cells = fit_cells(&data, &partition_cells(&data, 2).unwrap(), Kernel::Uniform, 0);
        assert_eq!(pooled_sigma(&cells, 0), Err(Error::NonpositiveDof));
    }

    #[test]
    fn rho_cases() {
        // s0 = 4, m~ = 1
        let d = design(&[0.0, 0.1, 0.2, 0.3], &[1.0; 4], 0.15, 1.0, Kernel::Uniform);
        assert_eq!(local_rho(&sigma(0.5), &d, 1.0).unwrap(), 1.0);
        // P0 = 4 (1 - 0)^2 = 4
        assert_eq!(local_rho(&sigma(4.0), &d, 0.0).unwrap(), 1.0);
        assert_eq!(local_rho(&sigma(1.0), &d, 0.0).unwrap(), 0.25);
        assert_eq!(eb_level_estimate(&sigma(4.0), &d, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn eb_estimate_convex_form() {
        // s0 = 1, m~ = 4, m0 = 0, P0 = 16; sigma^2 = 4 gives rho = 0.25
        let d = design(&[0.0], &[4.0], 0.0, 1.0, Kernel::Uniform);
        assert_eq!(eb_level_estimate(&sigma(4.0), &d, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn smoothing_rhos() {
        assert_eq!(smooth_rhos(&[1.0, 0.0, 0.5]), alloc::vec![0.5, 0.5, 0.25]);
        assert_eq!(smooth_rhos(&[0.3]), alloc::vec![0.3]);
    }

    #[test]
    fn global_weights() {
        let s = sigma(1.0);
        let perfect = [summary(3.0, 1.0, 1.0), summary(2.0, 0.0, 0.0)];
        assert_eq!(global_shrink_weight(&s, &perfect), 1.0);
        assert_eq!(global_shrink_estimate(&s, &perfect, 7.0, 9.0), 7.0);
        // Σ P0 = 4 = 2 k sigma^2 with k = 2
        let half = [summary(1.0, 1.0, 0.0), summary(3.0, 1.0, 0.0)];
        assert_eq!(global_shrink_weight(&s, &half), 0.5);
        let small = [summary(0.25, 1.0, 0.0), summary(0.25, 1.0, 0.0)];
        assert_eq!(global_shrink_weight(&s, &small), 1.0);
    }

    #[test]
    fn parametric_reduces_to_global() {
        let cells = [summary(4.0, 2.0, 0.5), summary(8.0, -1.0, 0.0), summary(2.0, 3.0, 1.0)];
        // r = 8 / s0 makes r s0 constant
        let r = |m: f64| m;
        let cells: Vec<CellSummary> = cells
            .iter()
            .map(|c| CellSummary {
                midpoint: 8.0 / c.s0,
                ..*c
            })
            .collect();
        let s = sigma(0.7);
        for c in &cells {
            let w = parametric_shrink_weight(&s, &cells, r, c.s0, 8.0 / c.s0).unwrap();
            assert!((w - global_shrink_weight(&s, &cells)).abs() < 1e-14);
        }
    }

    #[test]
    fn parametric_boundary_and_hand_formula() {
        let cells = [summary(1.0, 1.0, 0.0), summary(1.0, -1.0, 0.0)];
        // P0bar = 1 = sigma^2
        assert_eq!(parametric_shrink_weight(&sigma(1.0), &cells, |_| 1.0, 1.0, 1.0).unwrap(), 1.0);

        let cells = [
            CellSummary { midpoint: 0.1, s0: 5.0, m_tilde: 1.3, q0: 0.0, m0: 0.2 },
            CellSummary { midpoint: 0.5, s0: 7.0, m_tilde: -0.4, q0: 0.0, m0: 0.3 },
            CellSummary { midpoint: 0.9, s0: 3.0, m_tilde: 2.2, q0: 0.0, m0: 1.0 },
        ];
        let r = |x: f64| 1.0 + x * x;
        let s2 = 0.35;
        let p_bar = (5.0 * 1.1f64.powi(2) + 7.0 * 0.7f64.powi(2) + 3.0 * 1.2f64.powi(2)) / 3.0;
        let c = (5.0 * 1.01 + 7.0 * 1.25 + 3.0 * 1.81) / 3.0;
        let (s0x, rx) = (6.0, r(0.3));
        let lam = s0x * rx / c * (p_bar / s2 - 1.0);
        let (m0x, mt) = (0.4, 1.9);
        let hand = m0x / (1.0 + lam) + lam * mt / (1.0 + lam);
        let w = parametric_shrink_weight(&sigma(s2), &cells, r, s0x, rx).unwrap();
        assert!((shrink(w, m0x, mt) - hand).abs() < 1e-12);
    }

    #[test]
    fn stein_cases() {
        let s = sigma(1.0);
        let two = [summary(2.0, 1.0, 0.0), summary(2.0, 3.0, 1.0)];
        assert_eq!(stein_estimate(&s, &two, 0.0, 5.0), 5.0);
        let flat = [summary(2.0, 1.0, 1.0); 4];
        assert_eq!(stein_estimate(&s, &flat, 0.5, 2.0), 0.5);
        let cells = [summary(1.0, 1.0, 0.0), summary(1.0, 2.0, 0.0), summary(2.0, 1.0, 0.0)];
        // Σ P0 = 1 + 4 + 2 = 7
        let est = stein_estimate(&s, &cells, 0.0, 1.0);
        assert!((est - (1.0 - 1.0 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn gamma_limits() {
        let cells = [summary(4.0, 2.0, 1.0), summary(6.0, 0.0, 0.5)];
        let s = sigma_bayes_gamma(0.0, 0.0, &cells, &[0.0, 0.0]).unwrap();
        assert!((s.sigma2 - 2.0 / 10.0).abs() < 1e-15);
        assert_eq!(s.dof, 10.0);
        assert_eq!(sigma_bayes_gamma(3.0, 6.0, &[], &[]).unwrap().sigma2, 2.0);
        assert!(sigma_bayes_gamma(0.0, 0.0, &[], &[]).is_err());
    }

    #[test]
    fn gamma_matches_quadrature() {
        // Independent route: integrate the local levels out numerically at
        // each lambda, then compute the posterior of lambda on a grid.
        let cells = [
            CellSummary { midpoint: 0.0, s0: 3.0, m_tilde: 1.2, q0: 2.1, m0: 0.4 },
            CellSummary { midpoint: 1.0, s0: 5.5, m_tilde: -0.3, q0: 3.4, m0: 0.1 },
            CellSummary { midpoint: 2.0, s0: 2.0, m_tilde: 0.9, q0: 0.8, m0: 1.5 },
        ];
        let w0 = [1.5, 4.0, 0.7];
        let (alpha, beta) = (2.0, 1.5);
        let log_marginal = |lam: f64| {
            let mut total = (0.5 * alpha - 1.0) * libm::log(lam) - 0.5 * beta * lam;
            for (c, &w) in cells.iter().zip(&w0) {
                // local likelihood in a: lam^{s0/2} exp(-lam/2 [Q0 + s0 (a - m~)^2]); prior N(m0, 1/(lam w0))
                let sd = 1.0 / libm::sqrt(lam * (w + c.s0));
                let centre = (w * c.m0 + c.s0 * c.m_tilde) / (w + c.s0);
                let f = |a: f64| {
                    let ll = -0.5 * lam * (c.q0 + c.s0 * (a - c.m_tilde).powi(2));
                    let lp = 0.5 * libm::log(lam * w) - 0.5 * lam * w * (a - c.m0).powi(2);
                    libm::exp(ll + lp)
                };
                let integral = simpson(f, centre - 12.0 * sd, centre + 12.0 * sd, 400);
                total += 0.5 * c.s0 * libm::log(lam) + libm::log(integral);
            }
            total
        };
        let (lo, hi, n) = (1e-6, 12.0, 6000);
        let peak = (0..=n).map(|i| log_marginal(lo + (hi - lo) * i as f64 / n as f64)).fold(f64::MIN, f64::max);
        let z = simpson(|l| libm::exp(log_marginal(l) - peak), lo, hi, n);
        let m = simpson(|l| l * libm::exp(log_marginal(l) - peak), lo, hi, n) / z;
        let closed = sigma_bayes_gamma(alpha, beta, &cells, &w0).unwrap();
        assert!((1.0 / m - closed.sigma2).abs() < 1e-6 * closed.sigma2, "{} vs {}", 1.0 / m, closed.sigma2);
    }

    #[test]
    fn credible_interval_behaviour() {
        let post = LevelPosterior { mean: 1.0, precision: 4.0, rho: 0.2 };
        let s = SigmaInference { sigma2: 4.0, dof: 1e6, alpha: 0.0, beta: 0.0 };
        assert_eq!(level_credible_interval(&post, &s, 0.0).unwrap(), (1.0, 1.0));
        let (lo, hi) = level_credible_interval(&post, &s, 0.95).unwrap();
        assert!((hi - 1.0 - 1.959_963_984_540_054).abs() < 1e-4);
        assert!((1.0 - lo - (hi - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn noninformative_dof_is_n() {
        let data = Dataset::new((0..30).map(|i| i as f64).collect(), (0..30).map(|i| (i % 7) as f64).collect()).unwrap();
        let cells = fit_cells(&data, &partition_cells(&data, 3).unwrap(), Kernel::Uniform, 0);
        let summaries = cell_summaries(&cells, |_| 0.0);
        let s = sigma_bayes_gamma(0.0, 0.0, &summaries, &[0.0; 3]).unwrap();
        assert_eq!(s.dof, 30.0);
    }

    #[test]
    fn correlated_prior_cases() {
        let m0 = [1.0, 2.0, 3.0];
        let s0 = [2.0, 3.0, 4.0];
        let mt = [0.0, 5.0, -1.0];
        let zero = Mat::zeros(3, 3);
        assert_eq!(correlated_prior_posterior(&zero, &m0, &s0, &mt).unwrap(), mt.to_vec());
        let diag = Mat::from_diagonal(&Vector::from_column_slice(&[1.0, 2.0, 0.5]));
        let est = correlated_prior_posterior(&diag, &m0, &s0, &mt).unwrap();
        for i in 0..3 {
            let w = diag[(i, i)];
            assert!((est[i] - (w * m0[i] + s0[i] * mt[i]) / (w + s0[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn correlated_prior_against_elimination() {
        let t0 = [[2.0, -0.5, 0.1], [-0.5, 1.5, -0.4], [0.1, -0.4, 1.0]];
        let (m0, s0, mt) = ([0.5, 1.0, -0.2], [3.0, 1.0, 2.5], [1.4, 0.2, 0.7]);
        let mut a = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = t0[i][j] + if i == j { s0[i] } else { 0.0 };
                a[i][3] += t0[i][j] * m0[j];
            }
            a[i][3] += s0[i] * mt[i];
        }
        // Gauss-Jordan without pivoting; the matrix is diagonally dominant
        for c in 0..3 {
            let p = a[c][c];
            for j in 0..4 {
                a[c][j] /= p;
            }
            for r in 0..3 {
                if r != c {
                    let f = a[r][c];
                    for j in 0..4 {
                        a[r][j] -= f * a[c][j];
                    }
                }
            }
        }
        let t0m = Mat::from_fn(3, 3, |i, j| t0[i][j]);
        let est = correlated_prior_posterior(&t0m, &m0, &s0, &mt).unwrap();
        for i in 0..3 {
            assert!((est[i] - a[i][3]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn posterior_between_and_monotone(m0 in -5.0f64..5.0, w0 in 0.0f64..20.0, dw in 0.01f64..5.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = (0..8).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
            let d = design(&xs, &ys, 0.5, 1.2, Kernel::Epanechnikov);
            let mt = nw_fit(&d).unwrap();
            let a = level_posterior(LevelPrior { m0, w0 }, &d).unwrap();
            let b = level_posterior(LevelPrior { m0, w0: w0 + dw }, &d).unwrap();
            prop_assert!(a.mean >= m0.min(mt) - 1e-12 && a.mean <= m0.max(mt) + 1e-12);
            prop_assert!((b.mean - m0).abs() <= (a.mean - m0).abs() + 1e-12);
            prop_assert!(b.precision > a.precision);
        }

        #[test]
        fn eb_forms_agree(m0 in -3.0f64..3.0, s2 in 0.01f64..2.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = (0..6).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
            let d = design(&xs, &ys, 0.5, 1.2, Kernel::Epanechnikov);
            let s = sigma(s2);
            let rho = local_rho(&s, &d, m0).unwrap();
            let convex = shrink(rho, m0, nw_fit(&d).unwrap());
            let est = eb_level_estimate(&s, &d, m0).unwrap();
            prop_assert!((est - convex).abs() < 1e-12 * (1.0 + est.abs()));
            prop_assert!((0.0..=1.0).contains(&rho));
        }

        #[test]
        fn weights_in_unit_interval(s2 in 0.0f64..5.0, vals in proptest::collection::vec((0.1f64..10.0, -3.0f64..3.0, -3.0f64..3.0), 1..8)) {
            let cells: Vec<CellSummary> = vals.iter().map(|&(s0, mt, m0)| summary(s0, mt, m0)).collect();
            let w = global_shrink_weight(&sigma(s2), &cells);
            prop_assert!((0.0..=1.0).contains(&w));
            let p = parametric_shrink_weight(&sigma(s2), &cells, |_| 1.0, 2.0, 1.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
