//! The `bandwidth` subcommand: adaptive window widths along the grid, their
//! smoothed version, and order 1 to 3 residual summaries side by side.

use std::path::Path;

use locbayes_core::bandwidth::{adaptive_window, order_summaries, smooth_bandwidths, AdaptiveWindow, BandwidthRule, OrderSummary};
use locbayes_core::bayes_level::pooled_sigma;
use locbayes_core::cells::fit_cells;
use locbayes_core::data::partition_cells;
use locbayes_core::{Dataset, EvaluationGrid};

use crate::config::{BandwidthSpec, RunConfig};
use crate::io::{fmt17, write_summary, write_table};
use crate::parallel::par_map;
use crate::CliError;

#[derive(Clone, Debug)]
pub struct BandwidthReport {
    pub xs: Vec<f64>,
    pub pilot_sigma2: f64,
    pub windows: Vec<AdaptiveWindow>,
    pub smoothed: Vec<f64>,
    pub orders: Vec<Vec<OrderSummary>>,
}

/// Adaptive widths with the level from `bandwidth = adaptive:<level>`
/// (the default level when the configuration holds another rule).
pub fn run_bandwidth(cfg: &RunConfig, data: &Dataset) -> Result<BandwidthReport, CliError> {
    cfg.validate()?;
    if data.dim() != 1 {
        return Err(CliError::Config("bandwidth selection is for one covariate".into()));
    }
    let level = match cfg.bandwidth {
        BandwidthSpec::Adaptive(l) => l,
        _ => BandwidthRule::default().level,
    };
    let rule = BandwidthRule::adaptive(level, cfg.order);
    let (lo, hi) = data.x_range();
    let grid = EvaluationGrid::uniform(lo, hi, cfg.grid)?;
    let xs = grid.locations().to_vec();
    let partition = partition_cells(data, cfg.cells)?;
    let pilot_sigma2 = pooled_sigma(&fit_cells(data, &partition, cfg.kernel, cfg.order), cfg.order)?.sigma2;
    let windows = par_map(&xs, |&x| adaptive_window(data, x, pilot_sigma2, &rule))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<f64> = windows.iter().map(|w| w.h).collect();
    let smoothed = smooth_bandwidths(&raw, cfg.smooth);
    let orders = xs.iter().zip(&smoothed).map(|(&x, &h)| order_summaries(data, x, h)).collect();
    Ok(BandwidthReport {
        xs,
        pilot_sigma2,
        windows,
        smoothed,
        orders,
    })
}

/// Writes `bandwidths.csv`, `orders.csv` and `summary.txt`.
pub fn write_bandwidth(dir: &Path, cfg: &RunConfig, report: &BandwidthReport) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let rows: Vec<Vec<String>> = report
        .xs
        .iter()
        .zip(&report.windows)
        .zip(&report.smoothed)
        .map(|((&x, w), &s)| {
            vec![fmt17(x), fmt17(w.h0), fmt17(w.h), fmt17(s), w.tests.to_string(), w.reached_max.to_string()]
        })
        .collect();
    write_table(&dir.join("bandwidths.csv"), &["x", "h0", "h", "h_smoothed", "tests", "reached_max"], &rows)?;
    let orders: Vec<Vec<String>> = report
        .xs
        .iter()
        .zip(&report.orders)
        .flat_map(|(&x, list)| {
            list.iter().map(move |o| {
                vec![fmt17(x), o.order.to_string(), fmt17(o.level), fmt17(o.q0), fmt17(o.s0), fmt17(o.sigma2)]
            })
        })
        .collect();
    write_table(&dir.join("orders.csv"), &["x", "order", "level", "q0", "s0", "sigma2"], &orders)?;
    let mut summary: Vec<(String, String)> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    summary.push(("pilot_sigma2".into(), fmt17(report.pilot_sigma2)));
    let fold = |f: fn(f64, f64) -> f64, init: f64| report.smoothed.iter().copied().fold(init, f);
    summary.push(("h_min".into(), fmt17(fold(f64::min, f64::INFINITY))));
    summary.push(("h_max".into(), fmt17(fold(f64::max, f64::NEG_INFINITY))));
    write_summary(&dir.join("summary.txt"), &summary)
}
