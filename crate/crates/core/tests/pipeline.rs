//! Public-API workflows: data to cells to empirical-Bayes estimates to
//! start-curve averaging, plus invariants checked over random inputs.

use locbayes_core::bandwidth::{bandwidths, BandwidthRule};
use locbayes_core::bayes_level::{
    cell_summaries, global_shrink_weight, level_credible_interval, level_posterior, pooled_sigma, stein_estimate,
    LevelPrior,
};
use locbayes_core::cells::fit_cells;
use locbayes_core::data::partition_cells;
use locbayes_core::hierarchical::{
    hierarchical_estimate, Averaging, EbMode, HierarchicalConfig, LevelModel, LinearModel, Model,
};
use locbayes_core::local_fit::{local_design, local_designs, nw_fit};
use locbayes_core::multivariate::{
    box_cells, multi_local_design, multi_pooled_sigma, BasisSurface, MultiModel, SurfaceBasis, SurfacePosterior,
};
use locbayes_core::start_curves::{LinearBasis, StartCurvePosterior};
use locbayes_core::{Dataset, Error, EvaluationGrid, Kernel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn noisy_curve(n: usize, sigma: f64, seed: u64, m: impl Fn(f64) -> f64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let ys = xs
        .iter()
        .map(|&x| m(x) + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(xs, ys).unwrap()
}

fn level_model(data: &Dataset, xs: &[f64], eb: EbMode) -> LevelModel {
    let cells = fit_cells(data, &partition_cells(data, 10).unwrap(), Kernel::Epanechnikov, 0);
    LevelModel {
        designs: local_designs(data, xs, &[0.2], Kernel::Epanechnikov, 0).unwrap(),
        sigma: pooled_sigma(&cells, 0).unwrap(),
        cells,
        eb,
    }
}

#[test]
fn level_pipeline_beats_the_local_mean_near_a_good_start_curve() {
    let truth = |x: f64| 1.0 + 0.5 * x + 0.05 * (6.0 * x).sin();
    let data = noisy_curve(400, 0.5, 1, truth);
    let grid = EvaluationGrid::uniform(0.1, 0.9, 33).unwrap();
    let posterior = StartCurvePosterior::fit(&data, LinearBasis::polynomial(&data, 1).unwrap()).unwrap();
    let model = Model::Level(level_model(&data, grid.locations(), EbMode::Global));
    let eb = hierarchical_estimate(&model, &posterior, Averaging::PlugIn).unwrap();
    let flat = hierarchical_estimate(
        &Model::Level(level_model(&data, grid.locations(), EbMode::Fixed(0.0))),
        &posterior,
        Averaging::PlugIn,
    )
    .unwrap();
    let sse = |est: &[f64]| {
        grid.locations()
            .iter()
            .zip(est)
            .map(|(&x, e)| (e - truth(x)).powi(2))
            .sum::<f64>()
    };
    assert!(sse(&eb.estimate) < sse(&flat.estimate));
    assert!(eb.prior_weight.iter().all(|&w| (0.0..=1.0).contains(&w)));
    assert!(flat.prior_weight.iter().all(|&w| w == 0.0));
}

#[test]
fn flat_fixed_mode_is_the_kernel_smoother() {
    let data = noisy_curve(200, 0.3, 2, |x| x * x);
    let xs = [0.25, 0.5, 0.75];
    let posterior = StartCurvePosterior::fit(&data, LinearBasis::polynomial(&data, 1).unwrap()).unwrap();
    let out = hierarchical_estimate(
        &Model::Level(level_model(&data, &xs, EbMode::Fixed(0.0))),
        &posterior,
        Averaging::PlugIn,
    )
    .unwrap();
    for (i, &x) in xs.iter().enumerate() {
        let nw = nw_fit(&local_design(&data, x, 0.2, Kernel::Epanechnikov, 0)).unwrap();
        assert!((out.estimate[i] - nw).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_averaging_is_reproducible() {
    let data = noisy_curve(300, 0.4, 3, |x| 2.0 - x);
    let xs = [0.2, 0.5, 0.8];
    let posterior = StartCurvePosterior::fit(&data, LinearBasis::polynomial(&data, 1).unwrap()).unwrap();
    let cells = fit_cells(&data, &partition_cells(&data, 10).unwrap(), Kernel::Epanechnikov, 1);
    let model = Model::Linear(LinearModel {
        designs: local_designs(&data, &xs, &[0.3], Kernel::Epanechnikov, 1).unwrap(),
        sigma: pooled_sigma(&cells, 1).unwrap(),
        cells,
        eb: EbMode::Global,
        shape: None,
    });
    let mc = |seed| Averaging::MonteCarlo(HierarchicalConfig { draws: 60, seed });
    let a = hierarchical_estimate(&model, &posterior, mc(7)).unwrap();
    let b = hierarchical_estimate(&model, &posterior, mc(7)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.draws_used, 60);
    let plug = hierarchical_estimate(&model, &posterior, Averaging::PlugIn).unwrap();
    assert!(a.mc_se.iter().all(|&s| s > 0.0));
    assert!(plug.mc_se.iter().all(|&s| s == 0.0));
}

#[test]
fn stein_and_global_shrinkage_agree_on_direction() {
    let data = noisy_curve(400, 1.0, 4, |_| 0.3);
    let cells = fit_cells(&data, &partition_cells(&data, 10).unwrap(), Kernel::Uniform, 0);
    let sigma = pooled_sigma(&cells, 0).unwrap();
    let summaries = cell_summaries(&cells, |_| 0.0);
    let rho = global_shrink_weight(&sigma, &summaries);
    assert!((0.0..=1.0).contains(&rho));
    for c in &summaries {
        let stein = stein_estimate(&sigma, &summaries, 0.0, c.m_tilde);
        // both pull m~ towards zero without crossing it
        assert!(stein.abs() <= c.m_tilde.abs() + 1e-12);
        assert!(stein * c.m_tilde >= 0.0);
    }
}

#[test]
fn adaptive_bandwidths_stay_in_range_and_shrink_at_a_kink() {
    // single windows are noisy: each test passes with probability `level`
    let mut ratios: Vec<f64> = (0..15)
        .map(|seed| {
            let data = noisy_curve(300, 0.2, seed, |x| (x - 0.5).abs() * 3.0);
            let (lo, hi) = data.x_range();
            let hs = bandwidths(&data, &[0.2, 0.5, 0.8], 0.04, &BandwidthRule::adaptive(0.8, 1)).unwrap();
            assert!(hs.iter().all(|&h| h > 0.0 && h <= 2.0 * (hi - lo) * 1.0001));
            hs[1] / hs[0].max(hs[2])
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[7] < 1.0, "{ratios:?}");
}

#[test]
fn multivariate_pipeline_on_a_plane() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|r| 1.0 + r[0] - 2.0 * r[1] + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let data = Dataset::with_dim(2, rows.concat(), ys).unwrap();
    let cells = box_cells(&data, 3, Kernel::Epanechnikov).unwrap();
    let sigma = multi_pooled_sigma(&cells).unwrap();
    assert!((sigma.sigma2 - 0.01).abs() < 0.005, "{}", sigma.sigma2);
    let points = [vec![0.5, 0.5], vec![0.3, 0.7]];
    let designs = points
        .iter()
        .map(|p| multi_local_design(&data, p, 0.6, Kernel::Epanechnikov))
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    let surface = SurfacePosterior::fit(&data, SurfaceBasis::new(2, 1).unwrap()).unwrap();
    let start = BasisSurface {
        basis: &surface.basis,
        xi: &surface.xi_hat,
    };
    let curve = MultiModel {
        designs,
        cells,
        sigma,
        eb: EbMode::Global,
    }
    .estimate(&start)
    .unwrap();
    for (p, est) in points.iter().zip(&curve.points) {
        assert!((est.mean - (1.0 + p[0] - 2.0 * p[1])).abs() < 0.05, "{est:?}");
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    assert_eq!(Dataset::new(vec![], vec![]), Err(Error::EmptyDataset));
    assert!(matches!(Dataset::new(vec![0.0, f64::NAN], vec![1.0, 2.0]), Err(Error::NonFinite(1))));
    let data = noisy_curve(5, 0.1, 7, |x| x);
    assert!(matches!(partition_cells(&data, 10), Err(Error::TooManyCells { .. })));
    let far = local_design(&data, 10.0, 0.1, Kernel::Epanechnikov, 0);
    assert!(level_posterior(LevelPrior { m0: 0.0, w0: 0.0 }, &far).is_err());
}

proptest! {
    #[test]
    fn level_posterior_mean_lies_between_prior_and_local_mean(
        seed in 0u64..1000,
        m0 in -5.0f64..5.0,
        w0 in 0.0f64..100.0,
    ) {
        let data = noisy_curve(30, 1.0, seed, |x| x);
        let design = local_design(&data, 0.5, 0.8, Kernel::Epanechnikov, 0);
        prop_assume!(design.s0() > 0.0);
        let nw = nw_fit(&design).unwrap();
        let post = level_posterior(LevelPrior { m0, w0 }, &design).unwrap();
        let (lo, hi) = (m0.min(nw), m0.max(nw));
        prop_assert!(post.mean >= lo - 1e-9 && post.mean <= hi + 1e-9);
        prop_assert!((0.0..=1.0).contains(&post.rho));
        prop_assert!((post.precision - (w0 + design.s0())).abs() < 1e-9 * post.precision);
    }

    #[test]
    fn credible_intervals_nest_with_level(seed in 0u64..1000, w0 in 0.0f64..20.0) {
        let data = noisy_curve(120, 0.5, seed, |x| x);
        let cells = fit_cells(&data, &partition_cells(&data, 6).unwrap(), Kernel::Epanechnikov, 0);
        let sigma = pooled_sigma(&cells, 0).unwrap();
        let post = level_posterior(LevelPrior { m0: 0.0, w0 }, &local_design(&data, 0.5, 0.3, Kernel::Epanechnikov, 0)).unwrap();
        let (a_lo, a_hi) = level_credible_interval(&post, &sigma, 0.5).unwrap();
        let (b_lo, b_hi) = level_credible_interval(&post, &sigma, 0.95).unwrap();
        prop_assert!(b_lo < a_lo && a_lo <= post.mean && post.mean <= a_hi && a_hi < b_hi);
    }

    #[test]
    fn shrinkage_weight_is_a_probability(seed in 0u64..1000, shift in -3.0f64..3.0, k in 3usize..15) {
        let data = noisy_curve(200, 1.0, seed, |x| shift * x);
        let cells = fit_cells(&data, &partition_cells(&data, k).unwrap(), Kernel::Uniform, 0);
        let sigma = pooled_sigma(&cells, 0).unwrap();
        let rho = global_shrink_weight(&sigma, &cell_summaries(&cells, |_| 0.0));
        prop_assert!((0.0..=1.0).contains(&rho));
    }
}
