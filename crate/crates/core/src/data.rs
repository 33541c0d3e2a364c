//! Regression samples, evaluation grids and cell partitions.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Number of grid points used when no evaluation grid is given.
pub const DEFAULT_GRID_POINTS: usize = 201;

/// Pairs `(x_i, y_i)` with `x_i` of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    /// One-covariate dataset.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::with_dim(1, xs, ys)
    }

    /// `xs` holds the covariates row by row, `dim` values per point.
    pub fn with_dim(dim: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if ys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if xs.len() != dim * ys.len() {
            let found = xs.len() / ys.len().max(1);
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: dim,
                found,
            });
        }
        for (i, y) in ys.iter().enumerate() {
            if !y.is_finite() || xs[i * dim..(i + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Dataset { dim, xs, ys })
    }

    pub fn from_rows<I, R>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (R, f64)>,
        R: AsRef<[f64]>,
    {
        let mut dim = None;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (index, (x, y)) in rows.into_iter().enumerate() {
            let x = x.as_ref();
            let expected = *dim.get_or_insert(x.len());
            if x.len() != expected {
                return Err(Error::DimensionMismatch {
                    index,
                    expected,
                    found: x.len(),
                });
            }
            xs.extend_from_slice(x);
            ys.push(y);
        }
        Self::with_dim(dim.unwrap_or(1), xs, ys)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// First covariate of point `i`.
    pub fn x(&self, i: usize) -> f64 {
        self.xs[i * self.dim]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Flat covariate storage, `dim` values per point.
    pub fn xs_flat(&self) -> &[f64] {
        &self.xs
    }

    /// Iterates `(x, y)` using the first covariate.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.ys[i]))
    }

    /// Range of covariate `j`.
    pub fn range_of(&self, j: usize) -> (f64, f64) {
        (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let v = self.xs[i * self.dim + j];
            (lo.min(v), hi.max(v))
        })
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.range_of(0)
    }

    pub fn mean_of(&self, j: usize) -> f64 {
        (0..self.len()).map(|i| self.xs[i * self.dim + j]).sum::<f64>() / self.len() as f64
    }

    /// Variance of covariate `j` with divisor `n`.
    pub fn variance_of(&self, j: usize) -> f64 {
        let m = self.mean_of(j);
        (0..self.len())
            .map(|i| {
                let d = self.xs[i * self.dim + j] - m;
                d * d
            })
            .sum::<f64>()
            / self.len() as f64
    }

    pub fn mean_y(&self) -> f64 {
        self.ys.iter().sum::<f64>() / self.len() as f64
    }
}

/// Strictly increasing locations where estimates are produced.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationGrid {
    locations: Vec<f64>,
}

impl EvaluationGrid {
    pub fn new(locations: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::invalid("grid", "must contain at least one location"));
        }
        if locations.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid", "locations must be finite"));
        }
        if locations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid", "locations must be strictly increasing"));
        }
        Ok(EvaluationGrid { locations })
    }

    /// `points` equally spaced locations on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 1 {
            return Self::new(alloc::vec![0.5 * (lo + hi)]);
        }
        if !(hi > lo) {
            return Err(Error::DegenerateRange);
        }
        let step = (hi - lo) / (points - 1) as f64;
        let mut locations: Vec<f64> = (0..points).map(|i| lo + i as f64 * step).collect();
        locations[points - 1] = hi;
        Self::new(locations)
    }

    /// The default grid over the covariate range of `data`.
    pub fn over(data: &Dataset) -> Result<Self> {
        let (lo, hi) = data.x_range();
        Self::uniform(lo, hi, DEFAULT_GRID_POINTS)
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Flags each location lying outside the covariate range of `data`.
    pub fn extrapolated(&self, data: &Dataset) -> Vec<bool> {
        let (lo, hi) = data.x_range();
        self.locations.iter().map(|&x| x < lo || x > hi).collect()
    }
}

/// Abutting cells covering the covariate range.
///
/// Cells are half-open `[lo, hi)` except the last, which is closed, so every
/// data point belongs to exactly one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellPartition {
    edges: Vec<f64>,
    midpoints: Vec<f64>,
    widths: Vec<f64>,
}

impl CellPartition {
    /// Cells with the given widths laid end to end from `lo`.
    pub fn from_widths(lo: f64, widths: Vec<f64>) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::invalid("widths", "need at least one cell"));
        }
        if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("widths", "must be positive and finite"));
        }
        let mut midpoints = Vec::with_capacity(widths.len());
        let mut edges = Vec::with_capacity(widths.len() + 1);
        let mut left = lo;
        edges.push(lo);
        for w in &widths {
            midpoints.push(left + 0.5 * w);
            left += w;
            edges.push(left);
        }
        Ok(CellPartition {
            edges,
            midpoints,
            widths,
        })
    }

    pub fn k(&self) -> usize {
        self.midpoints.len()
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.k()]
    }

    /// Bounds `[left, right)` of cell `j` (closed on the right for the last cell).
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    /// Index of the cell containing `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < self.lo() || x > self.hi() {
            return None;
        }
        // first edge strictly greater than x, minus one
        let j = self.edges.partition_point(|&e| e <= x);
        Some(j.saturating_sub(1).min(self.k() - 1))
    }
}

/// Splits the covariate range of `data` into `k` equal-width cells.
pub fn partition_cells(data: &Dataset, k: usize) -> Result<CellPartition> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if data.dim() != 1 {
        return Err(Error::invalid("data", "cell partitions need one covariate"));
    }
    if k > data.len() {
        return Err(Error::TooManyCells { k, n: data.len() });
    }
    let (lo, hi) = data.x_range();
    if !(hi > lo) {
        return Err(Error::DegenerateRange);
    }
    let width = (hi - lo) / k as f64;
    let widths = alloc::vec![width; k];
    let mut partition = CellPartition::from_widths(lo, widths)?;
    // avoid accumulated rounding from summing widths
    for (j, m) in partition.midpoints.iter_mut().enumerate() {
        *m = lo + (j as f64 + 0.5) * width;
    }
    for (j, e) in partition.edges.iter_mut().enumerate() {
        *e = lo + j as f64 * width;
    }
    partition.edges[k] = hi;
    Ok(partition)
}
