//! Kernel-weighted local moments and the frequentist local estimators:
//! Nadaraya-Watson, local linear, local polynomial up to cubic, and the
//! kernel density estimate of the covariate.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::Kernel;
use crate::linalg::{self, Mat, Vector};
use crate::{Dataset, Error, Result};

/// Highest supported local polynomial order.
pub const MAX_ORDER: usize = 3;

/// Normalized-determinant threshold below which a local design is treated as
/// singular. The moment matrix is normalized by powers of `h` first, so the
/// test does not depend on the covariate units.
pub const DEGENERATE_DET: f64 = 1e-12;

/// One point of a neighbourhood, centred at the evaluation location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalPoint {
    pub dx: f64,
    pub y: f64,
    pub w: f64,
}

/// Weighted moments of a neighbourhood `N(x)`.
///
/// `s[j] = Σ w_i dx_i^j` and `t[j] = Σ w_i^2 dx_i^j` for `j = 0..=2p`,
/// `sy[j] = Σ w_i dx_i^j y_i` for `j = 0..=p`, with `dx_i = x_i - x`.
/// Points with zero weight are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDesign {
    x: f64,
    h: f64,
    order: usize,
    s: Vec<f64>,
    t: Vec<f64>,
    sy: Vec<f64>,
    points: Vec<LocalPoint>,
}

impl LocalDesign {
    /// Builds the moments from `(x_i, y_i, w_i)` triples.
    pub fn from_weighted<I>(x: f64, h: f64, order: usize, points: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64, f64)>,
    {
        let order = order.min(MAX_ORDER);
        let mut design = LocalDesign {
            x,
            h,
            order,
            s: vec![0.0; 2 * order + 1],
            t: vec![0.0; 2 * order + 1],
            sy: vec![0.0; order + 1],
            points: Vec::new(),
        };
        for (xi, y, w) in points {
            if w > 0.0 {
                design.push(LocalPoint { dx: xi - x, y, w });
            }
        }
        design
    }

    fn push(&mut self, p: LocalPoint) {
        let mut pow = 1.0;
        for j in 0..=2 * self.order {
            self.s[j] += p.w * pow;
            self.t[j] += p.w * p.w * pow;
            if j <= self.order {
                self.sy[j] += p.w * pow * p.y;
            }
            pow *= p.dx;
        }
        self.points.push(p);
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn s(&self, j: usize) -> f64 {
        self.s[j]
    }

    pub fn t(&self, j: usize) -> f64 {
        self.t[j]
    }

    pub fn sy(&self, j: usize) -> f64 {
        self.sy[j]
    }

    /// Effective local sample size `s_0(x)`.
    pub fn s0(&self) -> f64 {
        self.s[0]
    }

    pub fn t0(&self) -> f64 {
        self.t[0]
    }

    pub fn points(&self) -> &[LocalPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `(p+1) x (p+1)` moment matrix `S(x)` with entries `s_{j+k}`.
    pub fn s_matrix(&self, p: usize) -> Mat {
        assert!(p <= self.order, "design holds moments up to order {}", self.order);
        Mat::from_fn(p + 1, p + 1, |j, k| self.s[j + k])
    }

    /// The squared-weight analogue `T(x)`.
    pub fn t_matrix(&self, p: usize) -> Mat {
        assert!(p <= self.order, "design holds moments up to order {}", self.order);
        Mat::from_fn(p + 1, p + 1, |j, k| self.t[j + k])
    }

    /// Weighted residual sum `Σ w_i (y_i - Σ_j beta_j dx_i^j)^2`.
    pub fn weighted_rss(&self, beta: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let r = p.y - eval_poly(beta, p.dx);
                p.w * r * r
            })
            .sum()
    }
}

fn eval_poly(beta: &[f64], dx: f64) -> f64 {
    beta.iter().rev().fold(0.0, |acc, b| acc * dx + b)
}

/// Local fit: coefficients of `a + b (t - x) + c (t - x)^2 + ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFitResult {
    pub coefficients: Vec<f64>,
    /// Weighted residual sum `Q_0(x)` at the fitted coefficients.
    pub q0: f64,
    pub s0: f64,
}

impl LocalFitResult {
    /// The level `a`, i.e. the estimate of `m(x)`.
    pub fn level(&self) -> f64 {
        self.coefficients[0]
    }

    /// The slope `b`, the derivative estimate; zero for a local constant.
    pub fn slope(&self) -> f64 {
        self.coefficients.get(1).copied().unwrap_or(0.0)
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }
}

/// Moments of the closed window `|x_i - x| <= h/2` around `x` (first covariate).
pub fn local_design(data: &Dataset, x: f64, h: f64, kernel: Kernel, order: usize) -> LocalDesign {
    debug_assert!(h > 0.0);
    LocalDesign::from_weighted(
        x,
        h,
        order,
        data.pairs()
            .filter(|(xi, _)| (xi - x).abs() <= 0.5 * h)
            .map(|(xi, y)| (xi, y, kernel.weight(h, xi, x))),
    )
}

/// Designs at each location; `hs` holds one bandwidth per location or a
/// single shared one.
pub fn local_designs(data: &Dataset, xs: &[f64], hs: &[f64], kernel: Kernel, order: usize) -> Result<Vec<LocalDesign>> {
    if hs.len() != 1 && hs.len() != xs.len() {
        return Err(Error::invalid("hs", "needs one bandwidth or one per location"));
    }
    if hs.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::invalid("h", "must be positive and finite"));
    }
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| local_design(data, x, hs[if hs.len() == 1 { 0 } else { i }], kernel, order))
        .collect())
}

/// Nadaraya-Watson estimate `Σ w_i y_i / Σ w_i`.
pub fn nw_fit(design: &LocalDesign) -> Result<f64> {
    if !(design.s0() > 0.0) {
        return Err(Error::EmptyNeighbourhood);
    }
    Ok(design.sy(0) / design.s0())
}

/// Local linear fit from the explicit 2x2 weighted normal equations.
pub fn ll_fit(design: &LocalDesign) -> Result<LocalFitResult> {
    if design.order() < 1 {
        return Err(Error::invalid("design", "local linear fit needs first-order moments"));
    }
    let (s0, s1, s2) = (design.s(0), design.s(1), design.s(2));
    if !(s0 > 0.0) {
        return Err(Error::EmptyNeighbourhood);
    }
    let h2 = design.h() * design.h();
    let det = s0 * s2 - s1 * s1;
    if !(det / (s0 * s0 * h2) >= DEGENERATE_DET) {
        return Err(Error::DegenerateDesign);
    }
    let (r0, r1) = (design.sy(0), design.sy(1));
    let a = (s2 * r0 - s1 * r1) / det;
    let b = (s0 * r1 - s1 * r0) / det;
    let coefficients = vec![a, b];
    let q0 = design.weighted_rss(&coefficients);
    Ok(LocalFitResult {
        coefficients,
        q0,
        s0,
    })
}

/// Weighted local polynomial fit of order `p` (0 to 3).
///
/// The normal equations are solved in the rescaled coordinate `dx / h`.
pub fn local_poly_fit(design: &LocalDesign, p: usize) -> Result<LocalFitResult> {
    if p > design.order() {
        return Err(Error::invalid("p", "exceeds the order of the local design"));
    }
    if !(design.s0() > 0.0) {
        return Err(Error::EmptyNeighbourhood);
    }
    let h = design.h();
    let g = Mat::from_fn(p + 1, p + 1, |j, k| design.s(j + k) / libm::pow(h, (j + k) as f64));
    let r = Vector::from_fn(p + 1, |j, _| design.sy(j) / libm::pow(h, j as f64));
    let gamma = linalg::solve_moments(&g, &r, DEGENERATE_DET)?;
    let coefficients: Vec<f64> = (0..=p).map(|j| gamma[j] / libm::pow(h, j as f64)).collect();
    let q0 = design.weighted_rss(&coefficients);
    Ok(LocalFitResult {
        coefficients,
        q0,
        s0: design.s0(),
    })
}

/// Kernel density estimate `f_n(x) = n^{-1} Σ h^{-1} K((x_i - x)/h)`.
pub fn density_estimate(data: &Dataset, x: f64, h: f64, kernel: Kernel) -> f64 {
    let sum: f64 = data.pairs().map(|(xi, _)| kernel.density((xi - x) / h)).sum();
    sum / (data.len() as f64 * h)
}
