//! Risk simulation for the level model on a partition into cells.
//!
//! Loss is `Σ_cells s0 (estimate - target)^2`, with the uniform kernel on
//! each cell and the constant start curve `m0 = 1` held fixed. The target in a
//! cell is the true curve averaged over the cell's design points, which is
//! what the local mean estimates without bias; for curves that are constant
//! on cells it is the value at the midpoint.

use locbayes_core::bayes_level::{
    cell_summaries, eb_level_estimate, global_shrink_estimate, parametric_shrink_weight, pooled_sigma, shrink,
    stein_estimate,
};
use locbayes_core::cells::fit_cells;
use locbayes_core::data::partition_cells;
use locbayes_core::Kernel;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::io::{fmt17, write_table};
use crate::parallel::par_map;
use crate::simulate::{simulate_with, Family, SimSpec, Truth};
use crate::CliError;

pub const ESTIMATORS: [&str; 5] = ["nw", "eb-local", "eb-global", "parametric", "stein"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario {
    pub truth: Truth,
    pub sigma: f64,
    pub n: usize,
    pub cells: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            truth: Truth::Start,
            sigma: 1.0,
            n: 400,
            cells: 10,
            reps: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskRow {
    pub estimator: &'static str,
    pub mean_loss: f64,
    pub mc_se: f64,
}

/// Fixed start curve of the simulation.
pub fn start_curve(_x: f64) -> f64 {
    1.0
}

/// Losses of every estimator on one simulated sample, in [`ESTIMATORS`]
/// order.
pub fn replicate_losses(scenario: &Scenario, rep: u64) -> Result<[f64; 5], CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    rng.set_stream(rep);
    let data = simulate_with(
        &SimSpec {
            truth: scenario.truth,
            family: Family::Normal,
            n: scenario.n,
            sigma: scenario.sigma,
            dims: 1,
            seed: scenario.seed,
        },
        &mut rng,
    )?;
    let partition = partition_cells(&data, scenario.cells)?;
    let cells = fit_cells(&data, &partition, Kernel::Uniform, 0);
    let sigma = pooled_sigma(&cells, 0)?;
    let summaries = cell_summaries(&cells, start_curve);
    let mut loss = [0.0; 5];
    for cell in cells.iter().filter(|c| c.fit.is_some()) {
        let s0 = cell.s0();
        let m0 = start_curve(cell.midpoint);
        let m_tilde = cell.level().expect("filtered");
        let target = cell
            .design
            .points()
            .iter()
            .map(|p| scenario.truth.eval(cell.midpoint + p.dx))
            .sum::<f64>()
            / cell.design.points().len() as f64;
        let estimates = [
            m_tilde,
            eb_level_estimate(&sigma, &cell.design, m0)?,
            global_shrink_estimate(&sigma, &summaries, m0, m_tilde),
            shrink(parametric_shrink_weight(&sigma, &summaries, |_| 1.0, s0, 1.0)?, m0, m_tilde),
            stein_estimate(&sigma, &summaries, m0, m_tilde),
        ];
        for (l, e) in loss.iter_mut().zip(estimates) {
            *l += s0 * (e - target) * (e - target);
        }
    }
    Ok(loss)
}

/// Mean loss and its Monte-Carlo standard error per estimator; replications
/// run in parallel on independent random streams.
pub fn run_risk_sim(scenario: &Scenario) -> Result<Vec<RiskRow>, CliError> {
    if scenario.reps < 2 {
        return Err(CliError::Config("risk simulation needs at least 2 replications".into()));
    }
    let reps: Vec<u64> = (0..scenario.reps as u64).collect();
    let losses = par_map(&reps, |&r| replicate_losses(scenario, r))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let m = losses.len() as f64;
    Ok(ESTIMATORS
        .iter()
        .enumerate()
        .map(|(j, &estimator)| {
            let mean = losses.iter().map(|l| l[j]).sum::<f64>() / m;
            let var = losses.iter().map(|l| (l[j] - mean) * (l[j] - mean)).sum::<f64>() / (m - 1.0);
            RiskRow {
                estimator,
                mean_loss: mean,
                mc_se: (var / m).sqrt(),
            }
        })
        .collect())
}

/// Losses of `a` minus losses of `b`, paired over replications: mean and
/// standard error.
pub fn paired_difference(scenario: &Scenario, a: usize, b: usize) -> Result<(f64, f64), CliError> {
    let reps: Vec<u64> = (0..scenario.reps as u64).collect();
    let diffs: Vec<f64> = par_map(&reps, |&r| replicate_losses(scenario, r).map(|l| l[a] - l[b]))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let m = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / m;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

pub fn write_risk_table(path: &std::path::Path, rows: &[RiskRow]) -> Result<(), CliError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.estimator.to_string(), fmt17(r.mean_loss), fmt17(r.mc_se)])
        .collect();
    write_table(path, &["estimator", "mean_loss", "mc_se"], &body)
}
