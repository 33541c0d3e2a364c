use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use locbayes::bandwidth_cmd::{run_bandwidth, write_bandwidth};
use locbayes::config::RunConfig;
use locbayes::fit::{run_fit, write_fit};
use locbayes::io::{ingest_csv, write_dataset, write_summary};
use locbayes::parallel;
use locbayes::risk::{run_risk_sim, write_risk_table, Scenario};
use locbayes::simulate::{simulate, Family, SimSpec, Truth};
use locbayes::CliError;

/// Local Bayesian regression.
#[derive(Parser)]
#[command(name = "locbayes", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write estimates, credible bands and a summary.
    Fit {
        /// CSV with header `x,y` or `x1,...,xd,y`.
        data: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Choose window widths by the chi-square expansion rule.
    Bandwidth {
        data: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Compare the risk of the level-model estimators by simulation.
    RiskSim {
        /// True curve: start, shift:<c>, sine:<a>, step:<a> or kink:<a>.
        #[arg(long, default_value = "start")]
        truth: String,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 10)]
        cells: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV.
        #[arg(long, default_value = "risk.csv")]
        out: PathBuf,
    },
    /// Write a synthetic dataset.
    SimulateData {
        #[arg(long, default_value = "sine:0.5")]
        truth: String,
        /// normal or poisson.
        #[arg(long, default_value = "normal")]
        family: String,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        dims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
}

/// Overrides for the configuration file.
#[derive(Args)]
struct Flags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    /// fixed:<h>, adaptive:<level> or auto.
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long)]
    cells: Option<String>,
    /// linear, cubic, poly(k), spline(max_knots=J) or powers(...).
    #[arg(long)]
    start: Option<String>,
    /// local, global, parametric, stein, profile-w0 or fixed:<w0>.
    #[arg(long)]
    eb: Option<String>,
    /// Monte-Carlo start-curve draws; a positive value turns averaging on.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<String>,
    /// Credible band level.
    #[arg(long)]
    level: Option<String>,
    #[arg(long)]
    dims: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("model", &self.model),
            ("kernel", &self.kernel),
            ("bandwidth", &self.bandwidth),
            ("cells", &self.cells),
            ("start", &self.start),
            ("eb", &self.eb),
            ("seed", &self.seed),
            ("level", &self.level),
            ("dims", &self.dims),
            ("out", &self.out),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(m) = self.draws {
            cfg.draws = m;
            cfg.set("hierarchical", if m == 0 { "off" } else { "mc" })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    parallel::init_from_env()?;
    match cli.command {
        Command::Fit { data, flags } => {
            let cfg = flags.resolve()?;
            let dataset = ingest_csv(&data, Some(cfg.dims))?;
            let out = run_fit(&cfg, &dataset)?;
            write_fit(&cfg.out, &dataset, &out)?;
        }
        Command::Bandwidth { data, flags } => {
            let cfg = flags.resolve()?;
            let dataset = ingest_csv(&data, Some(cfg.dims))?;
            let report = run_bandwidth(&cfg, &dataset)?;
            write_bandwidth(&cfg.out, &cfg, &report)?;
        }
        Command::RiskSim {
            truth,
            sigma,
            n,
            reps,
            cells,
            seed,
            out,
        } => {
            let scenario = Scenario {
                truth: truth.parse::<Truth>()?,
                sigma,
                n,
                cells,
                reps,
                seed,
            };
            let rows = run_risk_sim(&scenario)?;
            write_risk_table(&out, &rows)?;
            let entries: Vec<(String, String)> = [
                ("truth", scenario.truth.to_string()),
                ("sigma", sigma.to_string()),
                ("n", n.to_string()),
                ("cells", cells.to_string()),
                ("reps", reps.to_string()),
                ("seed", seed.to_string()),
                ("start", "1".to_string()),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            write_summary(&out.with_extension("summary.txt"), &entries)?;
        }
        Command::SimulateData {
            truth,
            family,
            n,
            sigma,
            dims,
            seed,
            out,
        } => {
            let spec = SimSpec {
                truth: truth.parse()?,
                family: family.parse::<Family>()?,
                n,
                sigma,
                dims,
                seed,
            };
            write_dataset(&out, &simulate(&spec)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("locbayes: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
