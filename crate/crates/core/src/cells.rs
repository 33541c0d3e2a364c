//! Local fits on the cells of a partition, the raw material for pooled
//! quantities such as the residual scale and the prior-fit statistics.

use alloc::vec::Vec;

use crate::kernel::Kernel;
use crate::local_fit::{local_poly_fit, LocalDesign, LocalFitResult};
use crate::{CellPartition, Dataset};

/// The neighbourhood of one cell and, where the design allows it, its local fit.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFit {
    pub midpoint: f64,
    pub width: f64,
    pub design: LocalDesign,
    /// `None` for an empty or degenerate cell.
    pub fit: Option<LocalFitResult>,
}

impl CellFit {
    pub fn s0(&self) -> f64 {
        self.design.s0()
    }

    /// Local level estimate, if available.
    pub fn level(&self) -> Option<f64> {
        self.fit.as_ref().map(LocalFitResult::level)
    }
}

/// Builds the design of every cell using only the points the cell owns
/// (half-open membership, last cell closed) and fits a local polynomial of
/// the given order, centred at the midpoint with window width equal to the
/// cell width.
pub fn fit_cells(data: &Dataset, partition: &CellPartition, kernel: Kernel, order: usize) -> Vec<CellFit> {
    let k = partition.k();
    let mut members: Vec<Vec<(f64, f64)>> = (0..k).map(|_| Vec::new()).collect();
    for (x, y) in data.pairs() {
        if let Some(j) = partition.cell_of(x) {
            members[j].push((x, y));
        }
    }
    members
        .into_iter()
        .enumerate()
        .map(|(j, pts)| {
            let midpoint = partition.midpoints()[j];
            let width = partition.widths()[j];
            let design = LocalDesign::from_weighted(
                midpoint,
                width,
                order,
                // members lie in the window up to rounding at the cell edges
                pts.into_iter()
                    .map(|(x, y)| (x, y, kernel.scaled(((x - midpoint) / width).clamp(-0.5, 0.5)))),
            );
            let fit = local_poly_fit(&design, order).ok();
            CellFit {
                midpoint,
                width,
                design,
                fit,
            }
        })
        .collect()
}
