//! Several covariates: radial neighbourhoods, the `(d+1)`-dimensional local
//! linear design and fit, its conjugate posterior, pooled matrix shrinkage
//! and linear or quadratic start surfaces.
//!
//! Neighbourhoods are Euclidean balls, so covariates should be put on a
//! common scale first; [`Standardization`] rescales each to unit sample
//! variance and maps gradients back.

use alloc::vec;
use alloc::vec::Vec;

use crate::bayes_level::SigmaInference;
use crate::bayes_linear::{
    matrix_shrink_estimate, matrix_shrink_weight_from, posterior_precision_form, LinearPosterior, PriorWeight,
};
use crate::hierarchical::{Curve, EbMode, PointEstimate};
use crate::kernel::Kernel;
use crate::linalg::{self, Mat, Vector};
use crate::local_fit::DEGENERATE_DET;
use crate::{Dataset, Error, Result};

/// Above this dimension cell statistics come from per-point neighbourhoods
/// instead of a box grid.
pub const MAX_BOX_DIM: usize = 3;

/// Relative step for central-difference gradients.
pub const FD_STEP: f64 = 1e-5;

/// Per-covariate centring and scaling to unit sample variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let d = data.dim();
        let center: Vec<f64> = (0..d).map(|j| data.mean_of(j)).collect();
        let scale: Vec<f64> = (0..d).map(|j| libm::sqrt(data.variance_of(j))).collect();
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::DegenerateRange);
        }
        Ok(Standardization { center, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Standardization {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect()
    }

    pub fn invert_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| c + v * s)
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let xs: Vec<f64> = (0..data.len()).flat_map(|i| self.apply_point(data.row(i))).collect();
        Dataset::with_dim(data.dim(), xs, data.ys().to_vec())
    }

    /// Gradient with respect to the original covariates from one with
    /// respect to the standardized ones.
    pub fn gradient_to_raw(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }
}

/// One point of a multivariate neighbourhood, offsets relative to `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPoint {
    pub dz: Vec<f64>,
    pub y: f64,
    pub w: f64,
}

/// Weighted moments of `(1, x_i - x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLocalDesign {
    x: Vec<f64>,
    h: f64,
    s: Mat,
    t: Mat,
    sy: Vector,
    points: Vec<MultiPoint>,
}

impl MultiLocalDesign {
    /// Builds the moments from `(x_i, y_i, w_i)`; zero weights are dropped.
    pub fn from_weighted<'a, I>(x: &[f64], h: f64, points: I) -> Self
    where
        I: IntoIterator<Item = (&'a [f64], f64, f64)>,
    {
        let d = x.len();
        let mut design = MultiLocalDesign {
            x: x.to_vec(),
            h,
            s: Mat::zeros(d + 1, d + 1),
            t: Mat::zeros(d + 1, d + 1),
            sy: Vector::zeros(d + 1),
            points: Vec::new(),
        };
        for (xi, y, w) in points {
            if w > 0.0 {
                let dz: Vec<f64> = xi.iter().zip(x).map(|(a, b)| a - b).collect();
                let z = design_vector(&dz);
                let zz = &z * z.transpose();
                design.s += &zz * w;
                design.t += zz * (w * w);
                design.sy += z * (w * y);
                design.points.push(MultiPoint { dz, y, w });
            }
        }
        design
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> &Mat {
        &self.s
    }

    pub fn t(&self) -> &Mat {
        &self.t
    }

    pub fn sy(&self) -> &Vector {
        &self.sy
    }

    pub fn s0(&self) -> f64 {
        self.s[(0, 0)]
    }

    pub fn points(&self) -> &[MultiPoint] {
        &self.points
    }

    /// `Σ w (y - a - b'dz)^2`
    pub fn weighted_rss(&self, coef: &Vector) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let r = p.y - design_vector(&p.dz).dot(coef);
                p.w * r * r
            })
            .sum()
    }
}

fn design_vector(dz: &[f64]) -> Vector {
    Vector::from_iterator(dz.len() + 1, core::iter::once(1.0).chain(dz.iter().copied()))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
}

/// Radial weights `K̄(|x_i - x| / h)`.
pub fn multi_local_design(data: &Dataset, x: &[f64], h: f64, kernel: Kernel) -> Result<MultiLocalDesign> {
    if x.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            index: 0,
            expected: data.dim(),
            found: x.len(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "must be positive and finite"));
    }
    Ok(MultiLocalDesign::from_weighted(
        x,
        h,
        (0..data.len()).filter_map(|i| {
            let r = distance(data.row(i), x) / h;
            (r <= 0.5).then(|| (data.row(i), data.y(i), kernel.scaled(r)))
        }),
    ))
}

/// `(a~, b~)` with its residual sum.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiFit {
    pub coefficients: Vector,
    pub q0: f64,
    pub s0: f64,
}

impl MultiFit {
    pub fn level(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn gradient(&self) -> Vec<f64> {
        self.coefficients.iter().skip(1).copied().collect()
    }
}

/// Weighted least squares of `y` on `(1, x_i - x)`.
///
/// Degenerate when the determinant of the moment matrix, with offsets
/// measured in units of `h`, is below `1e-12 s0^{d+1}`.
pub fn multi_ll_fit(design: &MultiLocalDesign) -> Result<MultiFit> {
    let s0 = design.s0();
    if !(s0 > 0.0) {
        return Err(Error::EmptyNeighbourhood);
    }
    let p = design.dim() + 1;
    let h = design.h();
    let unit = Vector::from_fn(p, |j, _| if j == 0 { 1.0 } else { 1.0 / h });
    let scaled = Mat::from_fn(p, p, |i, j| design.s[(i, j)] * unit[i] * unit[j]);
    if !(scaled.determinant() / libm::pow(s0, p as f64) >= DEGENERATE_DET) {
        return Err(Error::DegenerateDesign);
    }
    let coefficients = linalg::solve(&design.s, &design.sy, "S")?;
    let q0 = design.weighted_rss(&coefficients);
    Ok(MultiFit { coefficients, q0, s0 })
}

/// Normal prior on `(a, b)` with covariance `sigma^2 precision^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPrior {
    pub mean: Vector,
    pub precision: Mat,
}

/// `(W0 + S)^{-1} (W0 (a0, b0) + r)` with `r = Σ w (1, dz) y`.
pub fn multi_linear_posterior(prior: &MultiPrior, design: &MultiLocalDesign) -> Result<LinearPosterior> {
    let p = design.dim() + 1;
    if prior.mean.len() != p || prior.precision.shape() != (p, p) {
        return Err(Error::invalid("prior", "dimension must be d + 1"));
    }
    posterior_precision_form(&prior.mean, &prior.precision, &design.s, &design.sy)
}

/// A region used for pooled statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCell {
    pub midpoint: Vec<f64>,
    pub design: MultiLocalDesign,
    pub fit: Option<MultiFit>,
}

fn cell(midpoint: Vec<f64>, design: MultiLocalDesign) -> MultiCell {
    let fit = multi_ll_fit(&design).ok();
    MultiCell { midpoint, design, fit }
}

/// `k^d` equal boxes over the covariate ranges; each point belongs to one
/// box and gets weight `K̄(|u| / sqrt(d))`, with `u` its offset from the box
/// centre in box widths.
pub fn box_cells(data: &Dataset, k: usize, kernel: Kernel) -> Result<Vec<MultiCell>> {
    let d = data.dim();
    if d > MAX_BOX_DIM {
        return Err(Error::invalid("dim", "box cells are limited to three covariates"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be positive"));
    }
    let ranges: Vec<(f64, f64)> = (0..d).map(|j| data.range_of(j)).collect();
    if ranges.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::DegenerateRange);
    }
    let widths: Vec<f64> = ranges.iter().map(|(lo, hi)| (hi - lo) / k as f64).collect();
    let count = k.pow(d as u32);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for i in 0..data.len() {
        let mut index = 0;
        for j in (0..d).rev() {
            let c = ((data.row(i)[j] - ranges[j].0) / widths[j]) as usize;
            index = index * k + c.min(k - 1);
        }
        members[index].push(i);
    }
    let h = widths.iter().copied().fold(0.0, f64::max);
    let root_d = libm::sqrt(d as f64);
    Ok(members
        .iter()
        .enumerate()
        .map(|(index, pts)| {
            let mut rest = index;
            let midpoint: Vec<f64> = (0..d)
                .map(|j| {
                    let c = rest % k;
                    rest /= k;
                    ranges[j].0 + (c as f64 + 0.5) * widths[j]
                })
                .collect();
            let design = MultiLocalDesign::from_weighted(
                &midpoint,
                h,
                pts.iter().map(|&i| {
                    let row = data.row(i);
                    let u = libm::sqrt(
                        (0..d)
                            .map(|j| {
                                let v = ((row[j] - midpoint[j]) / widths[j]).clamp(-0.5, 0.5);
                                v * v
                            })
                            .sum::<f64>(),
                    );
                    (row, data.y(i), kernel.scaled(u / root_d))
                }),
            );
            cell(midpoint, design)
        })
        .collect())
}

/// Cells centred at the given points with radial neighbourhoods of width
/// `h`; used when a box grid would be too sparse. Neighbourhoods overlap.
pub fn point_cells(data: &Dataset, centres: &[Vec<f64>], h: f64, kernel: Kernel) -> Result<Vec<MultiCell>> {
    centres
        .iter()
        .map(|c| Ok(cell(c.clone(), multi_local_design(data, c, h, kernel)?)))
        .collect()
}

/// `Σ Q0 / Σ (s0 - (d + 1))` over cells with a fit and enough weight.
pub fn multi_pooled_sigma(cells: &[MultiCell]) -> Result<SigmaInference> {
    let (mut q, mut dof) = (0.0, 0.0);
    for c in cells {
        if let Some(fit) = &c.fit {
            let params = (c.design.dim() + 1) as f64;
            if fit.s0 >= params {
                q += fit.q0;
                dof += fit.s0 - params;
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

/// A start surface with its gradient.
pub trait StartSurface {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// `(m0(x), grad m0(x))`
    fn prior_mean(&self, x: &[f64]) -> Vector {
        let g = self.gradient(x);
        Vector::from_iterator(g.len() + 1, core::iter::once(self.value(x)).chain(g))
    }
}

/// Pooled weight from `P0bar = k^{-1} Σ d d' S` with
/// `d = (a~ - m0, b~ - grad m0)` at the cell midpoints.
pub fn multi_matrix_shrink_weight(sigma: &SigmaInference, cells: &[MultiCell], start: &dyn StartSurface) -> Result<PriorWeight> {
    let parts: Vec<(Vector, &Mat)> = cells
        .iter()
        .filter_map(|c| {
            let fit = c.fit.as_ref()?;
            Some((&fit.coefficients - start.prior_mean(&c.midpoint), c.design.s()))
        })
        .collect();
    matrix_shrink_weight_from(sigma, &parts)
}

/// `M (m0, grad m0) + (I - M) (a~, b~)`
pub fn multi_matrix_shrink(weight: &PriorWeight, prior: &Vector, fit: &MultiFit) -> Vector {
    matrix_shrink_estimate(weight, prior, &fit.coefficients)
}

/// Central differences with step `FD_STEP x scale_j` in coordinate `j`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], scales: &[f64]) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|j| {
            let step = FD_STEP * scales[j];
            point[j] = x[j] + step;
            let up = f(&point);
            point[j] = x[j] - step;
            let down = f(&point);
            point[j] = x[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Polynomial surface of degree one or two in `d` covariates: the constant,
/// the linear terms and, for degree two, all squares and products.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceBasis {
    dim: usize,
    /// Exponent vectors of the monomials.
    terms: Vec<Vec<u32>>,
}

impl SurfaceBasis {
    pub fn new(dim: usize, degree: u32) -> Result<Self> {
        if dim == 0 || !(1..=2).contains(&degree) {
            return Err(Error::invalid("degree", "surfaces are linear or quadratic"));
        }
        let mut terms = vec![vec![0; dim]];
        for j in 0..dim {
            let mut e = vec![0; dim];
            e[j] = 1;
            terms.push(e);
        }
        if degree == 2 {
            for j in 0..dim {
                for k in j..dim {
                    let mut e = vec![0; dim];
                    e[j] += 1;
                    e[k] += 1;
                    terms.push(e);
                }
            }
        }
        Ok(SurfaceBasis { dim, terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Vector {
        Vector::from_iterator(
            self.terms.len(),
            self.terms
                .iter()
                .map(|e| e.iter().zip(x).map(|(&p, &v)| libm::pow(v, p as f64)).product::<f64>()),
        )
    }

    pub fn value(&self, xi: &Vector, x: &[f64]) -> f64 {
        self.eval(x).dot(xi)
    }

    pub fn gradient(&self, xi: &Vector, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                self.terms
                    .iter()
                    .zip(xi.iter())
                    .filter(|(e, _)| e[j] > 0)
                    .map(|(e, c)| {
                        let mut term = c * e[j] as f64;
                        for (k, (&p, &v)) in e.iter().zip(x).enumerate() {
                            let power = if k == j { p - 1 } else { p };
                            term *= libm::pow(v, power as f64);
                        }
                        term
                    })
                    .sum()
            })
            .collect()
    }
}

/// Approximate posterior `N(xi~, V~/n)` of a start surface fitted by least
/// squares, with the sandwich covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePosterior {
    pub basis: SurfaceBasis,
    pub xi_hat: Vector,
    pub cov: Mat,
}

impl SurfacePosterior {
    pub fn fit(data: &Dataset, basis: SurfaceBasis) -> Result<Self> {
        if basis.dim() != data.dim() {
            return Err(Error::invalid("basis", "dimension differs from the data"));
        }
        let n = data.len();
        let p = basis.len();
        if n <= p {
            return Err(Error::TooFewPoints { needed: p + 1, have: n });
        }
        let zs: Vec<Vector> = (0..n).map(|i| basis.eval(data.row(i))).collect();
        let g = zs.iter().fold(Mat::zeros(p, p), |acc, z| acc + z * z.transpose()) / n as f64;
        let zy = zs.iter().zip(data.ys()).fold(Vector::zeros(p), |acc, (z, &y)| acc + z * y) / n as f64;
        let g_inv = linalg::inverse(&g, "surface gram")?;
        let xi_hat = &g_inv * zy;
        let m = zs.iter().zip(data.ys()).fold(Mat::zeros(p, p), |acc, (z, &y)| {
            let r = y - z.dot(&xi_hat);
            acc + z * z.transpose() * (r * r)
        }) / n as f64;
        let cov = linalg::symmetrize(&(&g_inv * m * &g_inv)) / n as f64;
        Ok(SurfacePosterior { basis, xi_hat, cov })
    }
}

/// Surface `xi' z(x)`.
#[derive(Clone, Copy, Debug)]
pub struct BasisSurface<'a> {
    pub basis: &'a SurfaceBasis,
    pub xi: &'a Vector,
}

impl StartSurface for BasisSurface<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.basis.value(self.xi, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.basis.gradient(self.xi, x)
    }
}

/// A surface given by a closure, differentiated numerically.
pub struct FnSurface<F> {
    pub f: F,
    pub scales: Vec<f64>,
}

impl<F: Fn(&[f64]) -> f64> StartSurface for FnSurface<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        fd_gradient(&self.f, x, &self.scales)
    }
}

/// Local-linear model in several covariates.
#[derive(Clone, Debug)]
pub struct MultiModel {
    pub designs: Vec<MultiLocalDesign>,
    pub cells: Vec<MultiCell>,
    pub sigma: SigmaInference,
    /// `Global` (pooled matrix shrinkage) or `Fixed(w0)` with `W0 = w0 I`.
    pub eb: EbMode,
}

impl MultiModel {
    pub fn estimate(&self, start: &dyn StartSurface) -> Result<Curve> {
        let weight = match self.eb {
            EbMode::Global => Some(multi_matrix_shrink_weight(&self.sigma, &self.cells, start)?),
            EbMode::Fixed(w0) if w0 >= 0.0 => None,
            _ => {
                return Err(Error::InvalidParameter {
                    name: "eb",
                    reason: "multivariate-linear supports global and fixed",
                })
            }
        };
        let points = self
            .designs
            .iter()
            .map(|d| {
                let prior = start.prior_mean(d.x());
                let p = prior.len();
                match (&weight, self.eb) {
                    (Some(w), _) => {
                        let m = match w {
                            PriorWeight::Matrix(m) => m.clone(),
                            PriorWeight::Level(v) => {
                                let mut m = Mat::zeros(p, p);
                                m[(0, 0)] = *v;
                                m
                            }
                        };
                        let Ok(fit) = multi_ll_fit(d) else {
                            return Ok(PointEstimate {
                                mean: prior[0],
                                slope: f64::NAN,
                                prior_weight: 1.0,
                                variance: f64::NAN,
                            });
                        };
                        let est = multi_matrix_shrink(w, &prior, &fit);
                        let cov = (Mat::identity(p, p) - &m) * linalg::inverse(d.s(), "S")?;
                        Ok(PointEstimate {
                            mean: est[0],
                            slope: f64::NAN,
                            prior_weight: m[(0, 0)],
                            variance: self.sigma.sigma2 * cov[(0, 0)],
                        })
                    }
                    (None, EbMode::Fixed(w0)) => {
                        if w0.is_infinite() {
                            return Ok(PointEstimate {
                                mean: prior[0],
                                slope: f64::NAN,
                                prior_weight: 1.0,
                                variance: 0.0,
                            });
                        }
                        let w0m = Mat::identity(p, p) * w0;
                        let post = multi_linear_posterior(
                            &MultiPrior {
                                mean: prior,
                                precision: w0m.clone(),
                            },
                            d,
                        )?;
                        let m = &post.cov * w0m;
                        Ok(PointEstimate {
                            mean: post.level(),
                            slope: f64::NAN,
                            prior_weight: m[(0, 0)],
                            variance: self.sigma.sigma2 * post.cov[(0, 0)],
                        })
                    }
                    _ => unreachable!(),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Curve { points, w0: None })
    }
}
