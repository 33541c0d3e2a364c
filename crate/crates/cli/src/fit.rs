//! The `fit` subcommand: builds the model the configuration names, averages
//! it over start curves and attaches credible bands.

use std::path::Path;

use locbayes_core::bandwidth::{adaptive_window, smooth_bandwidths, BandwidthRule};
use locbayes_core::bayes_level::{pooled_sigma, SigmaInference};
use locbayes_core::cells::{fit_cells, CellFit};
use locbayes_core::data::partition_cells;
use locbayes_core::hierarchical::{
    combine_draws, start_draws, Averaged, Averaging, BasisCurve, CovarianceShape, EbMode, HierarchicalConfig,
    LevelModel, LinearModel, Model, MultModel, PoissonKind, PoissonModel, StartCurve,
};
use locbayes_core::linalg::Vector;
use locbayes_core::local_fit::local_designs;
use locbayes_core::multivariate::{
    box_cells, multi_local_design, multi_pooled_sigma, point_cells, BasisSurface, MultiModel, Standardization,
    SurfaceBasis, SurfacePosterior, MAX_BOX_DIM,
};
use locbayes_core::poisson::loglinear_start_posterior;
use locbayes_core::special::{normal_quantile, t_quantile};
use locbayes_core::start_curves::{
    delete_knot_spline_basis, gram_inverse, sample_normal, BasisTerm, LinearBasis, StartCurvePosterior,
};
use locbayes_core::{Dataset, EvaluationGrid};

use crate::config::{BandwidthSpec, Hierarchy, ModelKind, RunConfig, StartSpec};
use crate::io::{fmt17, write_estimates, write_plot, write_summary, EstimateRow};
use crate::parallel::par_map;
use crate::CliError;

/// Fraction of the covariate range used when no bandwidth is given.
pub const AUTO_BANDWIDTH_FRACTION: f64 = 0.2;

/// Result of a fit, ready to be written.
#[derive(Clone, Debug)]
pub struct FitOutput {
    /// The configuration with defaults and data-dependent values filled in.
    pub config: RunConfig,
    pub rows: Vec<EstimateRow>,
    /// Start curve at the evaluation points (one covariate only).
    pub start: Vec<f64>,
    /// Bandwidth at each evaluation point (one covariate only).
    pub bandwidths: Vec<f64>,
    pub averaged: Averaged,
    pub summary: Vec<(String, String)>,
}

/// Concrete bandwidth for `auto`.
pub fn resolve_bandwidth(cfg: &RunConfig, data: &Dataset) -> BandwidthSpec {
    match cfg.bandwidth {
        BandwidthSpec::Auto if data.dim() == 1 => {
            let (lo, hi) = data.x_range();
            BandwidthSpec::Fixed(AUTO_BANDWIDTH_FRACTION * (hi - lo))
        }
        BandwidthSpec::Auto => BandwidthSpec::Fixed(1.0),
        other => other,
    }
}

pub fn start_basis(spec: &StartSpec, data: &Dataset) -> Result<LinearBasis, CliError> {
    Ok(match spec {
        StartSpec::Poly(k) => LinearBasis::polynomial(data, *k)?,
        StartSpec::Spline { max_knots } => delete_knot_spline_basis(data, *max_knots)?,
        StartSpec::Powers(powers) => {
            let mut terms = vec![BasisTerm::Constant];
            terms.extend(powers.iter().map(|&p| BasisTerm::Power(p)));
            let sd = data.variance_of(0).sqrt();
            if sd.is_nan() || sd <= 0.0 {
                return Err(locbayes_core::Error::DegenerateRange.into());
            }
            LinearBasis::new(terms, data.mean_of(0), sd)?
        }
    })
}

fn averaging(cfg: &RunConfig) -> Averaging {
    match cfg.hierarchical {
        Hierarchy::Off | Hierarchy::PlugIn => Averaging::PlugIn,
        Hierarchy::MonteCarlo => Averaging::MonteCarlo(HierarchicalConfig {
            draws: cfg.draws,
            seed: cfg.seed,
        }),
    }
}

fn check_counts(data: &Dataset) -> Result<(), CliError> {
    match data.ys().iter().position(|&y| !(y >= 0.0 && y.fract() == 0.0)) {
        None => Ok(()),
        Some(i) => Err(CliError::Config(format!(
            "poisson models need nonnegative integer counts; row {} has y = {}",
            i + 1,
            data.y(i)
        ))),
    }
}

/// Runs the configured fit.
pub fn run_fit(cfg: &RunConfig, data: &Dataset) -> Result<FitOutput, CliError> {
    cfg.validate()?;
    if data.dim() != cfg.dims {
        return Err(CliError::Config(format!("data have {} covariates but dims = {}", data.dim(), cfg.dims)));
    }
    let mut resolved = cfg.clone();
    resolved.bandwidth = resolve_bandwidth(cfg, data);
    if cfg.model == ModelKind::MultivariateLinear {
        fit_multivariate(resolved, data)
    } else {
        fit_one(resolved, data)
    }
}

fn bands(averaged: &Averaged, quantile: f64) -> Vec<(f64, f64, f64)> {
    averaged
        .estimate
        .iter()
        .zip(&averaged.variance)
        .map(|(&m, &v)| {
            let sd = v.sqrt();
            (sd, m - quantile * sd, m + quantile * sd)
        })
        .collect()
}

fn band_quantile(level: f64, sigma: Option<&SigmaInference>) -> Result<f64, CliError> {
    let p = 0.5 * (1.0 + level);
    Ok(match sigma {
        Some(s) => t_quantile(p, s.dof)?,
        None => normal_quantile(p),
    })
}

fn summarize(
    cfg: &RunConfig,
    data: &Dataset,
    averaged: &Averaged,
    sigma: Option<&SigmaInference>,
    cells: usize,
    hs: &[f64],
) -> Vec<(String, String)> {
    let mut s: Vec<(String, String)> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let mut put = |k: &str, v: String| s.push((k.to_string(), v));
    put("n", data.len().to_string());
    if let Some(sig) = sigma {
        put("sigma2", fmt17(sig.sigma2));
        put("sigma_dof", fmt17(sig.dof));
    }
    put("w0", averaged.w0.map(fmt17).unwrap_or_else(|| "none".into()));
    let finite: Vec<f64> = averaged.prior_weight.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    put("prior_weight_min", fmt17(lo));
    put("prior_weight_mean", fmt17(finite.iter().sum::<f64>() / finite.len().max(1) as f64));
    put("prior_weight_max", fmt17(hi));
    put("k", cells.to_string());
    put("h_min", fmt17(hs.iter().copied().fold(f64::INFINITY, f64::min)));
    put("h_max", fmt17(hs.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    put("draws_used", averaged.draws_used.to_string());
    put("draws_skipped", averaged.draws_skipped.to_string());
    put("mc_se_max", fmt17(averaged.mc_se.iter().copied().fold(0.0, f64::max)));
    s
}

fn fit_one(cfg: RunConfig, data: &Dataset) -> Result<FitOutput, CliError> {
    let poisson = cfg.model.is_poisson();
    if poisson {
        check_counts(data)?;
    }
    let (lo, hi) = data.x_range();
    let grid = EvaluationGrid::uniform(lo, hi, cfg.grid)?;
    let xs = grid.locations();
    let partition = partition_cells(data, cfg.cells)?;
    let order = usize::from(cfg.model == ModelKind::NormalLinear);
    let cells: Vec<CellFit> = fit_cells(data, &partition, cfg.kernel, order);
    let sigma = if poisson { None } else { Some(pooled_sigma(&cells, order)?) };

    let hs: Vec<f64> = match cfg.bandwidth {
        BandwidthSpec::Fixed(h) => vec![h; xs.len()],
        BandwidthSpec::Adaptive(level) => {
            let pilot = pooled_sigma(&fit_cells(data, &partition, cfg.kernel, 1), 1)?.sigma2;
            let rule = BandwidthRule::adaptive(level, cfg.order);
            let raw = par_map(xs, |&x| adaptive_window(data, x, pilot, &rule).map(|w| w.h))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            smooth_bandwidths(&raw, cfg.smooth)
        }
        BandwidthSpec::Auto => unreachable!("resolved before fitting"),
    };
    let designs = local_designs(data, xs, &hs, cfg.kernel, order)?;

    let basis = start_basis(&cfg.start, data)?;
    let posterior = if poisson {
        loglinear_start_posterior(data, basis)?
    } else {
        StartCurvePosterior::fit(data, basis)?
    };
    let model = match cfg.model {
        ModelKind::NormalLevel => Model::Level(LevelModel {
            designs,
            cells,
            sigma: sigma.expect("normal model"),
            eb: cfg.eb,
        }),
        ModelKind::NormalLinear => {
            let shape = match cfg.eb {
                EbMode::Profile | EbMode::Parametric | EbMode::Fixed(_) => Some(CovarianceShape {
                    gram_inv: gram_inverse(data, &posterior.basis)?,
                    basis: posterior.basis.clone(),
                }),
                _ => None,
            };
            Model::Linear(LinearModel {
                designs,
                cells,
                sigma: sigma.expect("normal model"),
                eb: cfg.eb,
                shape,
            })
        }
        ModelKind::NormalMult => Model::Mult(MultModel {
            designs,
            cells,
            sigma: sigma.expect("normal model"),
            eb: cfg.eb,
        }),
        kind => Model::Poisson(PoissonModel {
            designs,
            cells,
            eb: cfg.eb,
            kind: match kind {
                ModelKind::PoissonLevel => PoissonKind::Level,
                ModelKind::PoissonLogLinear => PoissonKind::LogLinear,
                _ => PoissonKind::Mult,
            },
        }),
    };
    let link = model.link();
    let draws = start_draws(&posterior, averaging(&cfg))?;
    let averaged = combine_draws(par_map(&draws, |xi| {
        model.estimate(&BasisCurve {
            basis: &posterior.basis,
            xi,
            link,
        })
    }))?;

    let q = band_quantile(cfg.level, sigma.as_ref())?;
    let rows = xs
        .iter()
        .zip(bands(&averaged, q))
        .enumerate()
        .map(|(i, (&x, (sd, lower, upper)))| EstimateRow {
            x: vec![x],
            estimate: averaged.estimate[i],
            prior_weight: averaged.prior_weight[i],
            sd,
            lower,
            upper,
        })
        .collect();
    let centre = BasisCurve {
        basis: &posterior.basis,
        xi: &posterior.xi_hat,
        link,
    };
    let start = xs.iter().map(|&x| centre.value(x)).collect();
    let mut summary = summarize(&cfg, data, &averaged, sigma.as_ref(), partition.k(), &hs);
    summary.push((
        "start_coefficients".into(),
        posterior.xi_hat.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join(" "),
    ));
    Ok(FitOutput {
        config: cfg,
        rows,
        start,
        bandwidths: hs,
        averaged,
        summary,
    })
}

fn fit_multivariate(cfg: RunConfig, data: &Dataset) -> Result<FitOutput, CliError> {
    let BandwidthSpec::Fixed(h) = cfg.bandwidth else {
        unreachable!("validated and resolved before fitting")
    };
    let d = data.dim();
    let standardization = Standardization::from_data(data)?;
    let z = standardization.apply(data)?;
    let n = z.len();
    let cells = if d <= MAX_BOX_DIM {
        let per_axis = (cfg.cells as f64).powf(1.0 / d as f64).round().max(1.0) as usize;
        box_cells(&z, per_axis, cfg.kernel)?
    } else {
        let k = cfg.cells.min(n);
        let centres: Vec<Vec<f64>> = (0..k).map(|j| z.row(j * n / k).to_vec()).collect();
        log::warn!("{d} covariates: pooling over {k} neighbourhoods centred at data points instead of a box grid");
        point_cells(&z, &centres, h, cfg.kernel)?
    };
    let sigma = multi_pooled_sigma(&cells)?;
    let points: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).to_vec()).collect();
    let designs = par_map(&points, |p| multi_local_design(&z, p, h, cfg.kernel))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let degree = match cfg.start {
        StartSpec::Poly(k) => k,
        _ => unreachable!("validated"),
    };
    let posterior = SurfacePosterior::fit(&z, SurfaceBasis::new(d, degree)?)?;
    let draws: Vec<Vector> = match averaging(&cfg) {
        Averaging::PlugIn => vec![posterior.xi_hat.clone()],
        Averaging::MonteCarlo(c) => sample_normal(&posterior.xi_hat, &posterior.cov, c.draws, c.seed),
    };
    let k = cells.len();
    let model = MultiModel {
        designs,
        cells,
        sigma,
        eb: cfg.eb,
    };
    let averaged = combine_draws(par_map(&draws, |xi| {
        model.estimate(&BasisSurface {
            basis: &posterior.basis,
            xi,
        })
    }))?;
    let q = band_quantile(cfg.level, Some(&sigma))?;
    let rows = bands(&averaged, q)
        .into_iter()
        .enumerate()
        .map(|(i, (sd, lower, upper))| EstimateRow {
            x: data.row(i).to_vec(),
            estimate: averaged.estimate[i],
            prior_weight: averaged.prior_weight[i],
            sd,
            lower,
            upper,
        })
        .collect();
    let mut summary = summarize(&cfg, data, &averaged, Some(&sigma), k, &[h]);
    let join = |v: &[f64]| v.iter().map(|&x| fmt17(x)).collect::<Vec<_>>().join(" ");
    summary.push(("standardize_center".into(), join(&standardization.center)));
    summary.push(("standardize_scale".into(), join(&standardization.scale)));
    summary.push(("start_coefficients".into(), join(posterior.xi_hat.as_slice())));
    Ok(FitOutput {
        config: cfg,
        rows,
        start: Vec::new(),
        bandwidths: vec![h],
        averaged,
        summary,
    })
}

/// Writes `estimates.csv`, `summary.txt` and, for one covariate, the
/// two-column plot files.
pub fn write_fit(dir: &Path, data: &Dataset, out: &FitOutput) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_estimates(&dir.join("estimates.csv"), data.dim(), &out.rows)?;
    write_summary(&dir.join("summary.txt"), &out.summary)?;
    if data.dim() == 1 {
        let xs: Vec<f64> = out.rows.iter().map(|r| r.x[0]).collect();
        let data_x: Vec<f64> = data.pairs().map(|(x, _)| x).collect();
        write_plot(&dir.join("plot_data.dat"), &data_x, data.ys())?;
        let column = |f: fn(&EstimateRow) -> f64| out.rows.iter().map(f).collect::<Vec<_>>();
        write_plot(&dir.join("plot_estimate.dat"), &xs, &column(|r| r.estimate))?;
        write_plot(&dir.join("plot_lower.dat"), &xs, &column(|r| r.lower))?;
        write_plot(&dir.join("plot_upper.dat"), &xs, &column(|r| r.upper))?;
        write_plot(&dir.join("plot_start.dat"), &xs, &out.start)?;
        write_plot(&dir.join("plot_bandwidth.dat"), &xs, &out.bandwidths)?;
    }
    Ok(())
}
