//! Curve estimators conditional on a start curve, and their average over
//! start curves drawn from the approximate posterior of the start-curve
//! parameters.
//!
//! Every model precomputes its local designs and cell fits once; a draw only
//! changes the start curve, so per-draw work is the empirical-Bayes step and
//! the local posterior. The residual scale does not depend on the start
//! curve and is held by the model.

use alloc::vec;
use alloc::vec::Vec;

use crate::bayes_level::{
    cell_summaries, global_shrink_weight, local_rho, parametric_shrink_weight, shrink, CellSummary, SigmaInference,
};
use crate::bayes_linear::{
    fit_w0_profile, linear_cells, matrix_shrink_estimate, matrix_shrink_weight, moment_vector,
    posterior_covariance_form, posterior_precision_form, regression_w0_estimate, PriorWeight, StructuredCell,
};
use crate::cells::CellFit;
use crate::linalg::{self, Mat, Vector};
use crate::local_fit::{ll_fit, nw_fit, LocalDesign};
use crate::mult_correction::{mult_global_weight, mult_local_weight, mult_weighted_estimate, MultCorrectionStats};
use crate::poisson::{
    loglinear_local_posterior, mean_p0, poisson_cells, poisson_eb_estimate, poisson_eb_w0, poisson_level_posterior,
    poisson_mult_eb_estimate, poisson_mult_posterior, GammaPrior, PoissonLocalStats, PoissonMultStats,
    PoissonPooling, SlopePrior,
};
use crate::start_curves::{sample_start_curves, LinearBasis, StartCurvePosterior, DEFAULT_DRAWS};
use crate::{Error, Result};

/// Draws may fail (degenerate local designs, non-positive start values);
/// more than this fraction of failed draws is an error.
pub const MAX_SKIPPED_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HierarchicalConfig {
    pub draws: usize,
    pub seed: u64,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        HierarchicalConfig {
            draws: DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

/// A start curve `m0` with its derivative.
pub trait StartCurve {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
}

/// How the basis expansion maps to the curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Identity,
    /// `m0 = exp(xi' z)`, for counts.
    Log,
}

/// `m0(x) = link^{-1}(xi' z(x))`
#[derive(Clone, Copy, Debug)]
pub struct BasisCurve<'a> {
    pub basis: &'a LinearBasis,
    pub xi: &'a Vector,
    pub link: Link,
}

impl StartCurve for BasisCurve<'_> {
    fn value(&self, x: f64) -> f64 {
        let eta = self.basis.value(self.xi, x);
        match self.link {
            Link::Identity => eta,
            Link::Log => libm::exp(eta),
        }
    }

    fn slope(&self, x: f64) -> f64 {
        let d = self.basis.slope(self.xi, x);
        match self.link {
            Link::Identity => d,
            Link::Log => libm::exp(self.basis.value(self.xi, x)) * d,
        }
    }
}

/// A start curve given by two closures.
pub struct FnCurve<F, G>(pub F, pub G);

impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> StartCurve for FnCurve<F, G> {
    fn value(&self, x: f64) -> f64 {
        (self.0)(x)
    }

    fn slope(&self, x: f64) -> f64 {
        (self.1)(x)
    }
}

/// How the prior precision is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EbMode {
    /// Separately at each `x` from its own prior-fit statistic.
    Local,
    /// One pooled weight (a weight matrix for local-linear models).
    Global,
    /// Constant `w0` across `x` estimated from all cells; for local-linear
    /// models the regression estimate under the start-curve covariance shape.
    Parametric,
    /// Stein-type shrinkage.
    Stein,
    /// Marginal-likelihood `w0` under the start-curve covariance shape.
    Profile,
    /// Known `w0`; zero gives the flat-prior smoother.
    Fixed(f64),
}

impl EbMode {
    pub fn name(&self) -> &'static str {
        match self {
            EbMode::Local => "local",
            EbMode::Global => "global",
            EbMode::Parametric => "parametric",
            EbMode::Stein => "stein",
            EbMode::Profile => "profile-w0",
            EbMode::Fixed(_) => "fixed",
        }
    }
}

fn unsupported(model: &'static str) -> Error {
    Error::InvalidParameter {
        name: "eb",
        reason: model,
    }
}

/// Local Bayes answer at one location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointEstimate {
    pub mean: f64,
    /// Local slope estimate, `NaN` for models without one.
    pub slope: f64,
    /// Weight on the start curve (the level entry of the weight matrix for
    /// local-linear models).
    pub prior_weight: f64,
    /// Posterior variance, `NaN` where the model gives none.
    pub variance: f64,
}

impl PointEstimate {
    fn prior_only(m0: f64, slope: f64) -> Self {
        PointEstimate {
            mean: m0,
            slope,
            prior_weight: 1.0,
            variance: f64::NAN,
        }
    }
}

/// Estimates along the grid for one start curve.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<PointEstimate>,
    /// The estimated scalar prior precision, when the mode has one.
    pub w0: Option<f64>,
}

fn curve(points: Vec<PointEstimate>) -> Curve {
    Curve { points, w0: None }
}

/// Normal local-constant model.
#[derive(Clone, Debug)]
pub struct LevelModel {
    pub designs: Vec<LocalDesign>,
    pub cells: Vec<CellFit>,
    pub sigma: SigmaInference,
    pub eb: EbMode,
}

impl LevelModel {
    pub fn estimate(&self, start: &dyn StartCurve) -> Result<Curve> {
        let sigma2 = self.sigma.sigma2;
        let pooled: Vec<CellSummary> = match self.eb {
            EbMode::Global | EbMode::Parametric | EbMode::Stein => cell_summaries(&self.cells, |x| start.value(x)),
            EbMode::Local | EbMode::Fixed(_) => Vec::new(),
            EbMode::Profile => return Err(unsupported("profile-w0 needs a local-linear model")),
        };
        if pooled.is_empty() && matches!(self.eb, EbMode::Global | EbMode::Parametric | EbMode::Stein) {
            return Err(Error::NoInformation);
        }
        let global = global_shrink_weight(&self.sigma, &pooled);
        let stein = {
            let total: f64 = pooled.iter().map(CellSummary::p0).sum();
            if total > 0.0 {
                (pooled.len() as f64 - 2.0) * sigma2 / total
            } else {
                1.0
            }
        };
        if matches!(self.eb, EbMode::Stein) && pooled.len() < 3 {
            log::warn!("stein estimate with k = {} cells; dominance needs k >= 3", pooled.len());
        }
        let points = self
            .designs
            .iter()
            .map(|d| {
                let m0 = start.value(d.x());
                let s0 = d.s0();
                if !(s0 > 0.0) {
                    return Ok(match self.eb {
                        EbMode::Fixed(w0) if w0 > 0.0 => PointEstimate {
                            variance: if w0.is_infinite() { 0.0 } else { sigma2 / w0 },
                            ..PointEstimate::prior_only(m0, f64::NAN)
                        },
                        _ => PointEstimate::prior_only(m0, f64::NAN),
                    });
                }
                let rho = match self.eb {
                    EbMode::Local => local_rho(&self.sigma, d, m0)?,
                    EbMode::Global => global,
                    EbMode::Parametric => parametric_shrink_weight(&self.sigma, &pooled, |_| 1.0, s0, 1.0)?,
                    EbMode::Stein => stein,
                    EbMode::Fixed(w0) => {
                        if w0.is_infinite() {
                            1.0
                        } else {
                            w0 / (w0 + s0)
                        }
                    }
                    EbMode::Profile => unreachable!(),
                };
                Ok(PointEstimate {
                    mean: shrink(rho, m0, nw_fit(d)?),
                    slope: f64::NAN,
                    prior_weight: rho,
                    variance: sigma2 * (1.0 - rho.clamp(0.0, 1.0)) / s0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(curve(points))
    }
}

/// Covariance shape `C_x` of the local `(a, b)` induced by a linear
/// start-curve basis, so that the local prior covariance is `sigma^2 C_x / w0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceShape {
    pub basis: LinearBasis,
    pub gram_inv: Mat,
}

impl CovarianceShape {
    pub fn at(&self, x: f64) -> Mat {
        crate::bayes_linear::covariance_structure_basis(&self.basis, &self.gram_inv, x)
    }
}

/// Normal local-linear model.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub designs: Vec<LocalDesign>,
    pub cells: Vec<CellFit>,
    pub sigma: SigmaInference,
    pub eb: EbMode,
    /// Needed by the profile, parametric and positive fixed modes.
    pub shape: Option<CovarianceShape>,
}

impl LinearModel {
    fn shape(&self) -> Result<&CovarianceShape> {
        self.shape
            .as_ref()
            .ok_or(Error::invalid("shape", "this mode needs the start-curve covariance shape"))
    }

    pub fn estimate(&self, start: &dyn StartCurve) -> Result<Curve> {
        match self.eb {
            EbMode::Global => self.matrix_shrink(start),
            EbMode::Profile | EbMode::Parametric => {
                let shape = self.shape()?;
                let cells: Vec<StructuredCell> = linear_cells(&self.cells, |x| (start.value(x), start.slope(x)))
                    .iter()
                    .map(|c| StructuredCell::from_linear(c, shape.at(c.midpoint)))
                    .collect();
                let w0 = if matches!(self.eb, EbMode::Profile) {
                    fit_w0_profile(&self.sigma, &cells)?
                } else {
                    regression_w0_estimate(&self.sigma, &cells)?
                };
                let mut out = self.structured(start, w0)?;
                out.w0 = Some(w0);
                Ok(out)
            }
            EbMode::Fixed(w0) if w0 >= 0.0 => self.structured(start, w0),
            _ => Err(unsupported("normal-linear supports global, parametric, profile-w0 and fixed")),
        }
    }

    /// Posterior with prior covariance `sigma^2 C_x / w0` at every `x`.
    fn structured(&self, start: &dyn StartCurve, w0: f64) -> Result<Curve> {
        let points = self
            .designs
            .iter()
            .map(|d| {
                let x = d.x();
                let mean0 = Vector::from_vec(vec![start.value(x), start.slope(x)]);
                let s = d.s_matrix(1);
                let r = moment_vector(d, 1);
                let (post, weight) = if w0 == 0.0 {
                    (posterior_precision_form(&mean0, &Mat::zeros(2, 2), &s, &r)?, 0.0)
                } else {
                    let v = if w0.is_infinite() {
                        Mat::zeros(2, 2)
                    } else {
                        self.shape()?.at(x) / w0
                    };
                    let a = Mat::identity(2, 2) + &v * &s;
                    let m = linalg::inverse(&a, "I + V S")?;
                    (posterior_covariance_form(&mean0, &v, &s, &r)?, m[(0, 0)])
                };
                Ok(PointEstimate {
                    mean: post.level(),
                    slope: post.slope(),
                    prior_weight: weight,
                    variance: self.sigma.sigma2 * post.cov[(0, 0)],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(curve(points))
    }

    fn matrix_shrink(&self, start: &dyn StartCurve) -> Result<Curve> {
        let cells = linear_cells(&self.cells, |x| (start.value(x), start.slope(x)));
        let weight = matrix_shrink_weight(&self.sigma, &cells)?;
        let m = match &weight {
            PriorWeight::Matrix(m) => m.clone(),
            PriorWeight::Level(w) => Mat::from_row_slice(2, 2, &[*w, 0.0, 0.0, 0.0]),
        };
        let points = self
            .designs
            .iter()
            .map(|d| {
                let x = d.x();
                let prior = Vector::from_vec(vec![start.value(x), start.slope(x)]);
                let fit = match ll_fit(d) {
                    Ok(f) => Vector::from_vec(f.coefficients),
                    Err(_) => return Ok(PointEstimate::prior_only(prior[0], prior[1])),
                };
                let est = matrix_shrink_estimate(&weight, &prior, &fit);
                // with (W0 + S)^{-1} W0 = M the posterior covariance is (I - M) S^{-1}
                let s_inv = linalg::inverse(&d.s_matrix(1), "S")?;
                let cov = (Mat::identity(2, 2) - &m) * s_inv;
                Ok(PointEstimate {
                    mean: est[0],
                    slope: est[1],
                    prior_weight: m[(0, 0)],
                    variance: self.sigma.sigma2 * cov[(0, 0)],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(curve(points))
    }
}

/// Normal model with a local multiplicative correction to the start curve.
#[derive(Clone, Debug)]
pub struct MultModel {
    pub designs: Vec<LocalDesign>,
    pub cells: Vec<CellFit>,
    pub sigma: SigmaInference,
    pub eb: EbMode,
}

impl MultModel {
    pub fn estimate(&self, start: &dyn StartCurve) -> Result<Curve> {
        let m0 = |x: f64| start.value(x);
        let global = match self.eb {
            EbMode::Global => {
                let stats: Vec<MultCorrectionStats> = self
                    .cells
                    .iter()
                    .filter(|c| c.s0() > 0.0)
                    .map(|c| MultCorrectionStats::from_design(&c.design, m0))
                    .collect();
                mult_global_weight(&self.sigma, &stats)?
            }
            EbMode::Local | EbMode::Fixed(_) => f64::NAN,
            _ => return Err(unsupported("normal-mult supports local, global and fixed")),
        };
        let points = self
            .designs
            .iter()
            .map(|d| {
                let stats = MultCorrectionStats::from_design(d, m0);
                if !(stats.u0 > 0.0) {
                    return Ok(PointEstimate::prior_only(stats.m0_x, f64::NAN));
                }
                let rho = match self.eb {
                    EbMode::Local => mult_local_weight(&self.sigma, stats)?,
                    EbMode::Global => global,
                    EbMode::Fixed(w0) => {
                        if w0.is_infinite() {
                            1.0
                        } else {
                            w0 / (w0 + stats.u0)
                        }
                    }
                    _ => unreachable!(),
                };
                let est = mult_weighted_estimate(stats, rho, &self.sigma)?;
                Ok(PointEstimate {
                    mean: est.mean,
                    slope: f64::NAN,
                    prior_weight: est.prior_weight,
                    variance: est.variance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(curve(points))
    }
}

/// Which local model is used for counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoissonKind {
    Level,
    /// `a exp{b (t - x)}` with the slope integrated out on a grid.
    LogLinear,
    /// `m0(t) a`
    Mult,
}

/// Poisson count model.
#[derive(Clone, Debug)]
pub struct PoissonModel {
    pub designs: Vec<LocalDesign>,
    pub cells: Vec<CellFit>,
    pub eb: EbMode,
    pub kind: PoissonKind,
}

impl PoissonModel {
    fn pooling(&self, start: &dyn StartCurve) -> Result<PoissonPooling> {
        Ok(match self.eb {
            EbMode::Local | EbMode::Fixed(_) => PoissonPooling::Local,
            EbMode::Global => {
                let p0_bar = match self.kind {
                    PoissonKind::Mult => {
                        let stats = self
                            .cells
                            .iter()
                            .filter(|c| c.s0() > 0.0)
                            .map(|c| PoissonMultStats::from_design(&c.design, |x| start.value(x)))
                            .collect::<Result<Vec<_>>>()?;
                        if stats.is_empty() {
                            return Err(Error::NoInformation);
                        }
                        stats.iter().map(|s| s.p0()).sum::<Result<f64>>()? / stats.len() as f64
                    }
                    _ => mean_p0(&poisson_cells(&self.cells, |x| start.value(x)))?,
                };
                PoissonPooling::Global { p0_bar }
            }
            _ => return Err(unsupported("poisson models support local, global and fixed")),
        })
    }

    pub fn estimate(&self, start: &dyn StartCurve) -> Result<Curve> {
        let pooling = self.pooling(start)?;
        let points = self
            .designs
            .iter()
            .map(|d| match self.kind {
                PoissonKind::Level => self.level_point(d, start, pooling),
                PoissonKind::LogLinear => self.loglinear_point(d, start, pooling),
                PoissonKind::Mult => self.mult_point(d, start, pooling),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(curve(points))
    }

    fn level_point(&self, d: &LocalDesign, start: &dyn StartCurve, pooling: PoissonPooling) -> Result<PointEstimate> {
        let m0 = start.value(d.x());
        let stats = PoissonLocalStats::from_design(d);
        if let EbMode::Fixed(w0) = self.eb {
            if w0.is_infinite() || (stats.s0 == 0.0 && w0 > 0.0) {
                return Ok(PointEstimate {
                    variance: if w0.is_infinite() { 0.0 } else { m0 / w0 },
                    ..PointEstimate::prior_only(m0, f64::NAN)
                });
            }
            let post = poisson_level_posterior(GammaPrior::centred(m0, w0), stats)?;
            return Ok(PointEstimate {
                mean: post.mean(),
                slope: f64::NAN,
                prior_weight: w0 / post.rate,
                variance: post.variance(),
            });
        }
        if !(stats.s0 > 0.0) {
            return Ok(PointEstimate::prior_only(m0, f64::NAN));
        }
        let est = poisson_eb_estimate(stats, m0, pooling)?;
        Ok(PointEstimate {
            mean: est.mean,
            slope: f64::NAN,
            prior_weight: est.prior_weight,
            variance: est.variance,
        })
    }

    fn loglinear_point(&self, d: &LocalDesign, start: &dyn StartCurve, pooling: PoissonPooling) -> Result<PointEstimate> {
        let m0 = start.value(d.x());
        let stats = PoissonLocalStats::from_design(d);
        let w0 = match (self.eb, pooling) {
            (EbMode::Fixed(w0), _) => w0,
            _ if !(stats.s0 > 0.0) => f64::INFINITY,
            (_, PoissonPooling::Local) => poisson_eb_w0(stats, m0)?,
            (_, PoissonPooling::Global { .. }) => {
                let rho = poisson_eb_estimate(stats, m0, pooling)?.prior_weight;
                if rho >= 1.0 {
                    f64::INFINITY
                } else {
                    stats.s0 * rho / (1.0 - rho)
                }
            }
        };
        if w0.is_infinite() {
            return Ok(PointEstimate {
                mean: m0,
                slope: start.slope(d.x()) / m0,
                prior_weight: 1.0,
                variance: 0.0,
            });
        }
        let post = loglinear_local_posterior(d, m0, w0, SlopePrior::for_bandwidth(d.h()))?;
        Ok(PointEstimate {
            mean: post.level,
            slope: post.slope,
            prior_weight: if w0 + stats.s0 > 0.0 { w0 / (w0 + stats.s0) } else { 1.0 },
            variance: post.level_variance,
        })
    }

    fn mult_point(&self, d: &LocalDesign, start: &dyn StartCurve, pooling: PoissonPooling) -> Result<PointEstimate> {
        let stats = PoissonMultStats::from_design(d, |x| start.value(x))?;
        if let EbMode::Fixed(w0) = self.eb {
            if w0.is_infinite() || (stats.u == 0.0 && w0 > 0.0) {
                return Ok(PointEstimate {
                    variance: if w0.is_infinite() { 0.0 } else { stats.m0_x * stats.m0_x / w0 },
                    ..PointEstimate::prior_only(stats.m0_x, f64::NAN)
                });
            }
            let post = poisson_mult_posterior(stats, w0)?;
            return Ok(PointEstimate {
                mean: stats.m0_x * post.mean(),
                slope: f64::NAN,
                prior_weight: w0 / post.rate,
                variance: stats.m0_x * stats.m0_x * post.variance(),
            });
        }
        if !(stats.u > 0.0) {
            return Ok(PointEstimate::prior_only(stats.m0_x, f64::NAN));
        }
        let est = poisson_mult_eb_estimate(stats, pooling)?;
        Ok(PointEstimate {
            mean: est.mean,
            slope: f64::NAN,
            prior_weight: est.prior_weight,
            variance: est.variance,
        })
    }
}

/// Any of the one-covariate models.
#[derive(Clone, Debug)]
pub enum Model {
    Level(LevelModel),
    Linear(LinearModel),
    Mult(MultModel),
    Poisson(PoissonModel),
}

impl Model {
    pub fn estimate(&self, start: &dyn StartCurve) -> Result<Curve> {
        match self {
            Model::Level(m) => m.estimate(start),
            Model::Linear(m) => m.estimate(start),
            Model::Mult(m) => m.estimate(start),
            Model::Poisson(m) => m.estimate(start),
        }
    }

    pub fn link(&self) -> Link {
        match self {
            Model::Poisson(_) => Link::Log,
            _ => Link::Identity,
        }
    }
}

/// Draw-averaged estimates on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Averaged {
    pub estimate: Vec<f64>,
    pub slope: Vec<f64>,
    pub prior_weight: Vec<f64>,
    /// Mean posterior variance plus the between-draw variance of the
    /// estimates.
    pub variance: Vec<f64>,
    /// Monte-Carlo standard error of `estimate`, zero for a single draw.
    pub mc_se: Vec<f64>,
    /// Per-draw estimates, one row per used draw.
    pub per_draw: Vec<Vec<f64>>,
    pub draws_used: usize,
    pub draws_skipped: usize,
    /// Median over draws of the estimated scalar prior precision.
    pub w0: Option<f64>,
}

/// `x_1 + Σ (x_j - x_1) / M`: exact when all values coincide.
fn stable_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let first = match it.next() {
        Some(v) => v,
        None => return f64::NAN,
    };
    let count = values.clone().count() as f64;
    if !first.is_finite() {
        return values.sum::<f64>() / count;
    }
    first + values.map(|v| v - first).sum::<f64>() / count
}

/// Averages per-draw results, skipping failed draws.
///
/// More than [`MAX_SKIPPED_FRACTION`] failures is an error.
pub fn combine_draws(results: Vec<Result<Curve>>) -> Result<Averaged> {
    let total = results.len();
    if total == 0 {
        return Err(Error::invalid("draws", "must be at least one"));
    }
    let mut curves = Vec::with_capacity(total);
    let mut last_error = None;
    for r in results {
        match r {
            Ok(c) => curves.push(c),
            Err(e) => last_error = Some(e),
        }
    }
    let skipped = total - curves.len();
    if skipped > 0 {
        log::warn!("{skipped} of {total} start-curve draws failed; last error: {:?}", last_error);
    }
    if curves.is_empty() {
        // nothing to average: report why the draws failed
        return Err(last_error.expect("every draw failed"));
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * total as f64 {
        return Err(Error::TooManySkippedDraws { skipped, total });
    }
    let len = curves[0].points.len();
    if curves.iter().any(|c| c.points.len() != len) {
        return Err(Error::invalid("draws", "curves differ in length"));
    }
    let m = curves.len() as f64;
    let mut out = Averaged {
        estimate: Vec::with_capacity(len),
        slope: Vec::with_capacity(len),
        prior_weight: Vec::with_capacity(len),
        variance: Vec::with_capacity(len),
        mc_se: Vec::with_capacity(len),
        per_draw: curves.iter().map(|c| c.points.iter().map(|p| p.mean).collect()).collect(),
        draws_used: curves.len(),
        draws_skipped: skipped,
        w0: None,
    };
    for i in 0..len {
        let means = curves.iter().map(|c| c.points[i].mean);
        let mean = stable_mean(means.clone());
        let ss: f64 = means.map(|v| (v - mean) * (v - mean)).sum();
        out.estimate.push(mean);
        out.slope.push(stable_mean(curves.iter().map(|c| c.points[i].slope)));
        out.prior_weight.push(stable_mean(curves.iter().map(|c| c.points[i].prior_weight)));
        out.variance.push(stable_mean(curves.iter().map(|c| c.points[i].variance)) + ss / m);
        out.mc_se.push(if curves.len() > 1 { libm::sqrt(ss / (m - 1.0) / m) } else { 0.0 });
    }
    let mut w0s: Vec<f64> = curves.iter().filter_map(|c| c.w0).collect();
    if !w0s.is_empty() {
        w0s.sort_by(f64::total_cmp);
        let mid = w0s.len() / 2;
        out.w0 = Some(if w0s.len() % 2 == 1 {
            w0s[mid]
        } else {
            0.5 * (w0s[mid - 1] + w0s[mid])
        });
    }
    Ok(out)
}

/// Sequential average of `inner` over the parameter draws.
pub fn average_over_draws(draws: &[Vector], inner: impl Fn(&Vector) -> Result<Curve>) -> Result<Averaged> {
    combine_draws(draws.iter().map(inner).collect())
}

/// How the start-curve uncertainty is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Start curve fixed at the point estimate.
    PlugIn,
    MonteCarlo(HierarchicalConfig),
}

/// Parameter values the model is evaluated at: the point estimate alone or
/// `M` posterior draws.
pub fn start_draws(posterior: &StartCurvePosterior, averaging: Averaging) -> Result<Vec<Vector>> {
    match averaging {
        Averaging::PlugIn => Ok(vec![posterior.xi_hat.clone()]),
        Averaging::MonteCarlo(cfg) => {
            if cfg.draws == 0 {
                return Err(Error::invalid("draws", "must be at least one"));
            }
            Ok(sample_start_curves(posterior, cfg.draws, cfg.seed))
        }
    }
}

/// `M^{-1} Σ m^(x, xi_m)` over start curves drawn from `posterior`, or the
/// plug-in estimate at the posterior mean.
pub fn hierarchical_estimate(model: &Model, posterior: &StartCurvePosterior, averaging: Averaging) -> Result<Averaged> {
    let link = model.link();
    let draws = start_draws(posterior, averaging)?;
    average_over_draws(&draws, |xi| {
        model.estimate(&BasisCurve {
            basis: &posterior.basis,
            xi,
            link,
        })
    })
}

/// Level model averaged over start curves.
pub fn final_level_estimate(config: HierarchicalConfig, model: &LevelModel, posterior: &StartCurvePosterior) -> Result<Averaged> {
    hierarchical_estimate(&Model::Level(model.clone()), posterior, Averaging::MonteCarlo(config))
}

/// Local-linear model averaged over start curves; `w0` is re-estimated for
/// every draw.
pub fn final_linear_estimate(config: HierarchicalConfig, model: &LinearModel, posterior: &StartCurvePosterior) -> Result<Averaged> {
    hierarchical_estimate(&Model::Linear(model.clone()), posterior, Averaging::MonteCarlo(config))
}

/// Poisson model averaged over log-linear start curves.
pub fn final_poisson_estimate(config: HierarchicalConfig, model: &PoissonModel, posterior: &StartCurvePosterior) -> Result<Averaged> {
    hierarchical_estimate(&Model::Poisson(model.clone()), posterior, Averaging::MonteCarlo(config))
}
