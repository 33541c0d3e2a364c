//! Synthetic regression data for the `simulate-data` and `risk-sim`
//! subcommands.

use std::fmt;
use std::str::FromStr;

use locbayes_core::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::CliError;

/// True regression curves, all built on the constant 1, which is also the
/// start curve of the risk simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truth {
    /// The constant 1.
    Start,
    /// `1 + c`
    Shift(f64),
    /// `1 + a sin(2 pi x)`
    Sine(f64),
    /// `1 + a 1{x > 1/2}`
    Step(f64),
    /// `1 + a |x - 1/2|`
    Kink(f64),
}

impl Truth {
    pub fn eval(self, x: f64) -> f64 {
        let base = 1.0;
        match self {
            Truth::Start => base,
            Truth::Shift(c) => base + c,
            Truth::Sine(a) => base + a * (2.0 * std::f64::consts::PI * x).sin(),
            Truth::Step(a) => base + if x > 0.5 { a } else { 0.0 },
            Truth::Kink(a) => base + a * (x - 0.5).abs(),
        }
    }
}

impl FromStr for Truth {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s == "start" {
            return Ok(Truth::Start);
        }
        let bad = || CliError::Config(format!("truth `{s}`: expected start, shift:<c>, sine:<a>, step:<a> or kink:<a>"));
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        match kind.trim() {
            "shift" => Ok(Truth::Shift(v)),
            "sine" => Ok(Truth::Sine(v)),
            "step" => Ok(Truth::Step(v)),
            "kink" => Ok(Truth::Kink(v)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truth::Start => f.write_str("start"),
            Truth::Shift(c) => write!(f, "shift:{c}"),
            Truth::Sine(a) => write!(f, "sine:{a}"),
            Truth::Step(a) => write!(f, "step:{a}"),
            Truth::Kink(a) => write!(f, "kink:{a}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Normal,
    /// Counts with mean `exp(truth)`.
    Poisson,
}

impl FromStr for Family {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "normal" => Ok(Family::Normal),
            "poisson" => Ok(Family::Poisson),
            other => Err(CliError::Config(format!("family `{other}`: expected normal or poisson"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimSpec {
    pub truth: Truth,
    pub family: Family,
    pub n: usize,
    pub sigma: f64,
    pub dims: usize,
    pub seed: u64,
}

/// Uniform covariates on `[0, 1]^d`; the response depends on the first
/// covariate through the truth and on the others through `0.5 x_j`.
pub fn simulate(spec: &SimSpec) -> Result<Dataset, CliError> {
    simulate_with(spec, &mut ChaCha20Rng::seed_from_u64(spec.seed))
}

pub fn simulate_with(spec: &SimSpec, rng: &mut impl Rng) -> Result<Dataset, CliError> {
    if spec.n == 0 || spec.dims == 0 {
        return Err(CliError::Config("n and dims must be positive".into()));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(CliError::Config("sigma must be nonnegative".into()));
    }
    let mut xs = Vec::with_capacity(spec.n * spec.dims);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..spec.dims).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = spec.truth.eval(row[0]) + row[1..].iter().map(|v| 0.5 * v).sum::<f64>();
        let y = match spec.family {
            Family::Normal => m + spec.sigma * rng.sample::<f64, _>(StandardNormal),
            Family::Poisson => Poisson::new(m.exp())
                .map_err(|e| CliError::Config(format!("poisson mean: {e}")))?
                .sample(rng),
        };
        xs.extend(row);
        ys.push(y);
    }
    Ok(Dataset::with_dim(spec.dims, xs, ys)?)
}
