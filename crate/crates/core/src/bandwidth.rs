//! Window widths: fixed, or chosen per location by expanding the window while
//! a local goodness-of-fit statistic stays below a chi-square quantile; and
//! post-smoothing of the chosen widths.
//!
//! The statistic `Q0(x) / sigma~^2` uses uniform weights, for which it is
//! `chi^2` with `s0 - (p + 1)` degrees of freedom when the local polynomial
//! of order `p` is correct and residuals are normal.

use alloc::vec::Vec;

pub use crate::special::chi2_quantile;

use crate::kernel::Kernel;
use crate::local_fit::{local_design, local_poly_fit, LocalFitResult, MAX_ORDER};
use crate::{Dataset, Error, Result};

/// Geometric growth factor of the window between tests.
pub const GROWTH: f64 = 1.2;

/// Default quantile level of the stopping rule.
pub const DEFAULT_LEVEL: f64 = 0.80;

/// Relative slack so points exactly on the window edge are kept.
const EDGE_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandwidthMode {
    Fixed(f64),
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandwidthRule {
    pub mode: BandwidthMode,
    /// Quantile level `q(level, dof)` of the stopping rule.
    pub level: f64,
    /// Order of the local polynomial tested.
    pub order: usize,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule {
            mode: BandwidthMode::Adaptive,
            level: DEFAULT_LEVEL,
            order: 1,
        }
    }
}

impl BandwidthRule {
    pub fn fixed(h: f64) -> Self {
        BandwidthRule {
            mode: BandwidthMode::Fixed(h),
            ..Self::default()
        }
    }

    pub fn adaptive(level: f64, order: usize) -> Self {
        BandwidthRule {
            mode: BandwidthMode::Adaptive,
            level,
            order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BandwidthMode::Fixed(h) = self.mode {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("h", "must be positive and finite"));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("level", "must lie in (0, 1)"));
        }
        if self.order > MAX_ORDER {
            return Err(Error::invalid("order", "at most 3"));
        }
        Ok(())
    }

    /// Points the minimum window must hold: `max(5, 2 (p + 1))`.
    pub fn min_points(&self) -> usize {
        (2 * (self.order + 1)).max(5)
    }
}

/// Sorted distances from `x` to every covariate value.
fn distances(data: &Dataset, x: f64) -> Vec<f64> {
    let mut d: Vec<f64> = data.pairs().map(|(xi, _)| (xi - x).abs()).collect();
    d.sort_by(f64::total_cmp);
    d
}

/// `h0(x)`: the smallest centred window holding `rule.min_points()` points
/// (or all of them, when there are fewer).
pub fn min_width(data: &Dataset, x: f64, rule: &BandwidthRule) -> f64 {
    let d = distances(data, x);
    let k = rule.min_points().min(d.len());
    window_through(d[k - 1], data)
}

fn window_through(dist: f64, data: &Dataset) -> f64 {
    let (lo, hi) = data.x_range();
    let floor = 1e-9 * (hi - lo).max(1.0);
    (2.0 * dist * (1.0 + EDGE_SLACK)).max(floor)
}

/// Order-`p` fit with uniform weights in the window of width `h`.
fn uniform_fit(data: &Dataset, x: f64, h: f64, p: usize) -> Result<LocalFitResult> {
    local_poly_fit(&local_design(data, x, h, Kernel::Uniform, p), p)
}

/// Outcome of the adaptive search at one location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveWindow {
    pub h: f64,
    pub h0: f64,
    /// Number of widths tested.
    pub tests: usize,
    /// Whether the search stopped at the width covering all data.
    pub reached_max: bool,
}

/// Grows the window from `h0(x)` by [`GROWTH`] while
/// `Q0 / sigma2 <= q(level, s0 - (p + 1))`, returning the last passing width.
/// Widths with no residual degrees of freedom are skipped; if the first
/// tested width already fails, that width is returned.
pub fn adaptive_window(data: &Dataset, x: f64, sigma2: f64, rule: &BandwidthRule) -> Result<AdaptiveWindow> {
    rule.validate()?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid("sigma2", "must be positive and finite"));
    }
    let p = rule.order;
    let h0 = min_width(data, x, rule);
    let h_max = window_through(*distances(data, x).last().expect("datasets are nonempty"), data).max(h0);
    let mut h = h0;
    let mut accepted: Option<f64> = None;
    let mut tests = 0;
    loop {
        let fit = uniform_fit(data, x, h, p);
        let dof = fit.as_ref().map(|f| f.s0 - (p + 1) as f64).unwrap_or(0.0);
        match fit {
            Ok(f) if dof > 0.0 => {
                tests += 1;
                let passes = f.q0 / sigma2 <= chi2_quantile(rule.level, dof)?;
                if !passes {
                    return Ok(AdaptiveWindow {
                        h: accepted.unwrap_or(h),
                        h0,
                        tests,
                        reached_max: false,
                    });
                }
                accepted = Some(h);
            }
            Ok(_) | Err(Error::DegenerateDesign) | Err(Error::EmptyNeighbourhood) => {
                if h >= h_max {
                    return Err(Error::TooFewPoints {
                        needed: p + 2,
                        have: data.len(),
                    });
                }
            }
            Err(e) => return Err(e),
        }
        if h >= h_max {
            return Ok(AdaptiveWindow {
                h: accepted.unwrap_or(h),
                h0,
                tests,
                reached_max: true,
            });
        }
        h = (h * GROWTH).min(h_max);
    }
}

/// Widths at each location; fixed rules give the same width everywhere.
pub fn bandwidths(data: &Dataset, xs: &[f64], sigma2: f64, rule: &BandwidthRule) -> Result<Vec<f64>> {
    rule.validate()?;
    match rule.mode {
        BandwidthMode::Fixed(h) => Ok(xs.iter().map(|_| h).collect()),
        BandwidthMode::Adaptive => xs
            .iter()
            .map(|&x| adaptive_window(data, x, sigma2, rule).map(|w| w.h))
            .collect(),
    }
}

/// Centred moving average over `window` neighbours; near the ends the
/// window is truncated to the available values.
pub fn smooth_bandwidths(hs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let (left, right) = ((window - 1) / 2, window / 2);
    (0..hs.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(hs.len() - 1);
            hs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Residual summary of the uniform-weight order-`p` fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderSummary {
    pub order: usize,
    pub level: f64,
    pub q0: f64,
    pub s0: f64,
    /// `Q0 / (s0 - (p + 1))`, NaN without residual degrees of freedom.
    pub sigma2: f64,
}

/// Fits of orders 1 to 3 side by side; no order is selected.
pub fn order_summaries(data: &Dataset, x: f64, h: f64) -> Vec<OrderSummary> {
    (1..=MAX_ORDER)
        .filter_map(|p| {
            let f = uniform_fit(data, x, h, p).ok()?;
            let dof = f.s0 - (p + 1) as f64;
            Some(OrderSummary {
                order: p,
                level: f.level(),
                q0: f.q0,
                s0: f.s0,
                sigma2: if dof > 0.0 { f.q0 / dof } else { f64::NAN },
            })
        })
        .collect()
}
