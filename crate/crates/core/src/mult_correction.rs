//! Normal model with a local multiplicative correction to the start curve:
//! `m(t) = m0(t) a` on the neighbourhood, `a ~ N(1, sigma^2 / w0)`.

use alloc::vec::Vec;

use crate::bayes_level::{shrink, SigmaInference};
use crate::local_fit::LocalDesign;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultCorrectionStats {
    /// `u0 = Σ w m0(x_i)^2`
    pub u0: f64,
    /// `Σ w m0(x_i) y_i`; `a~ = uy / u0`.
    pub uy: f64,
    /// `m0(x)`
    pub m0_x: f64,
}

impl MultCorrectionStats {
    pub fn from_design(design: &LocalDesign, m0: impl Fn(f64) -> f64) -> Self {
        let (mut u0, mut uy) = (0.0, 0.0);
        for p in design.points() {
            let v = m0(design.x() + p.dx);
            u0 += p.w * v * v;
            uy += p.w * v * p.y;
        }
        MultCorrectionStats {
            u0,
            uy,
            m0_x: m0(design.x()),
        }
    }

    /// Least-squares correction `a~ = Σ w m0 y / u0`.
    pub fn a_tilde(&self) -> Result<f64> {
        if !(self.u0 > 0.0) {
            return Err(Error::EmptyNeighbourhood);
        }
        Ok(self.uy / self.u0)
    }

    /// `P0 = u0 (a~ - 1)^2`, with mean `sigma^2 (1 + u0 / w0)` for uniform weights.
    pub fn p0(&self) -> Result<f64> {
        let d = self.a_tilde()? - 1.0;
        Ok(self.u0 * d * d)
    }
}

/// `m0(x) (w0 + u0 a~) / (w0 + u0)`
pub fn mult_correction_estimate(stats: MultCorrectionStats, w0: f64) -> Result<f64> {
    if !(w0 >= 0.0) {
        return Err(Error::invalid("w0", "must be nonnegative"));
    }
    if w0.is_infinite() {
        return Ok(stats.m0_x);
    }
    let den = w0 + stats.u0;
    if !(den > 0.0) {
        return Err(Error::NoInformation);
    }
    Ok(stats.m0_x * (w0 + stats.uy) / den)
}

/// Estimate with the weight `rho = w0 / (w0 + u0)` on the start curve
/// supplied directly; the posterior variance is `sigma^2 m0(x)^2 (1 - rho) / u0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultEstimate {
    pub mean: f64,
    pub prior_weight: f64,
    pub variance: f64,
}

pub fn mult_weighted_estimate(stats: MultCorrectionStats, rho: f64, sigma: &SigmaInference) -> Result<MultEstimate> {
    let a = shrink(rho, 1.0, stats.a_tilde()?);
    Ok(MultEstimate {
        mean: stats.m0_x * a,
        prior_weight: rho,
        variance: sigma.sigma2 * stats.m0_x * stats.m0_x * (1.0 - rho) / stats.u0,
    })
}

/// Local empirical-Bayes weight `min(1, sigma~^2 / P0)`.
pub fn mult_local_weight(sigma: &SigmaInference, stats: MultCorrectionStats) -> Result<f64> {
    let p0 = stats.p0()?;
    Ok(if p0 <= sigma.sigma2 { 1.0 } else { sigma.sigma2 / p0 })
}

/// Pooled weight `k sigma~^2 / Σ P0` over cells, truncated to `[0, 1]`.
pub fn mult_global_weight(sigma: &SigmaInference, cells: &[MultCorrectionStats]) -> Result<f64> {
    let p0s: Vec<f64> = cells.iter().map(|c| c.p0()).collect::<Result<_>>()?;
    let total: f64 = p0s.iter().sum();
    if !(total > 0.0) {
        return Ok(1.0);
    }
    Ok((p0s.len() as f64 * sigma.sigma2 / total).clamp(0.0, 1.0))
}
