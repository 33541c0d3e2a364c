//! Run configuration: a line-oriented `key = value` file, overridden by
//! command-line flags, resolved to concrete values before a run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use locbayes_core::hierarchical::EbMode;
use locbayes_core::Kernel;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    NormalLevel,
    NormalLinear,
    NormalMult,
    PoissonLevel,
    PoissonLogLinear,
    PoissonMult,
    MultivariateLinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::NormalLevel,
        ModelKind::NormalLinear,
        ModelKind::NormalMult,
        ModelKind::PoissonLevel,
        ModelKind::PoissonLogLinear,
        ModelKind::PoissonMult,
        ModelKind::MultivariateLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NormalLevel => "normal-level",
            ModelKind::NormalLinear => "normal-linear",
            ModelKind::NormalMult => "normal-mult",
            ModelKind::PoissonLevel => "poisson-level",
            ModelKind::PoissonLogLinear => "poisson-loglinear-local",
            ModelKind::PoissonMult => "poisson-mult",
            ModelKind::MultivariateLinear => "multivariate-linear",
        }
    }

    pub fn is_poisson(self) -> bool {
        matches!(
            self,
            ModelKind::PoissonLevel | ModelKind::PoissonLogLinear | ModelKind::PoissonMult
        )
    }

    /// Empirical-Bayes modes the model supports.
    pub fn eb_modes(self) -> &'static [&'static str] {
        match self {
            ModelKind::NormalLevel => &["local", "global", "parametric", "stein", "fixed"],
            ModelKind::NormalLinear => &["global", "parametric", "profile-w0", "fixed"],
            ModelKind::NormalMult => &["local", "global", "fixed"],
            ModelKind::PoissonLevel | ModelKind::PoissonLogLinear | ModelKind::PoissonMult => &["local", "global", "fixed"],
            ModelKind::MultivariateLinear => &["global", "fixed"],
        }
    }
}

impl FromStr for ModelKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| CliError::Config(format!("unknown model `{s}`")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandwidthSpec {
    /// Resolved from the data: a fifth of the covariate range, or one
    /// standardized unit with several covariates.
    Auto,
    Fixed(f64),
    Adaptive(f64),
}

impl FromStr for BandwidthSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s == "auto" {
            return Ok(BandwidthSpec::Auto);
        }
        let bad = || CliError::Config(format!("bandwidth `{s}`: expected fixed:<h>, adaptive:<level> or auto"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "fixed" if v > 0.0 && v.is_finite() => Ok(BandwidthSpec::Fixed(v)),
            "adaptive" if v > 0.0 && v < 1.0 => Ok(BandwidthSpec::Adaptive(v)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for BandwidthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthSpec::Auto => f.write_str("auto"),
            BandwidthSpec::Fixed(h) => write!(f, "fixed:{h}"),
            BandwidthSpec::Adaptive(l) => write!(f, "adaptive:{l}"),
        }
    }
}

/// Start-curve basis.
#[derive(Clone, Debug, PartialEq)]
pub enum StartSpec {
    /// Polynomial of the given degree: `constant`, `linear`, `quadratic`,
    /// `cubic` or `poly(k)`.
    Poly(u32),
    /// Cubic spline with knots chosen by backward deletion.
    Spline { max_knots: usize },
    /// Constant plus the listed powers of the standardized covariate.
    Powers(Vec<u32>),
}

impl FromStr for StartSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        let bad = || CliError::Config(format!("start `{s}`: expected linear, cubic, poly(k), spline(max_knots=J) or powers(...)"));
        let inner = |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')).map(str::trim);
        match s {
            "constant" => return Ok(StartSpec::Poly(0)),
            "linear" => return Ok(StartSpec::Poly(1)),
            "quadratic" => return Ok(StartSpec::Poly(2)),
            "cubic" => return Ok(StartSpec::Poly(3)),
            _ => {}
        }
        if let Some(k) = inner("poly(") {
            return k.parse().map(StartSpec::Poly).map_err(|_| bad());
        }
        if let Some(arg) = inner("spline(") {
            let j = arg.strip_prefix("max_knots").map(|r| r.trim_start().trim_start_matches('=')).unwrap_or(arg);
            return j.trim().parse().map(|max_knots| StartSpec::Spline { max_knots }).map_err(|_| bad());
        }
        if let Some(list) = inner("powers(") {
            let mut powers = list
                .split(',')
                .map(|p| p.trim().parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            powers.sort_unstable();
            powers.dedup();
            if powers.contains(&0) {
                return Err(CliError::Config("start powers: the constant is always included; list powers >= 1".into()));
            }
            return Ok(StartSpec::Powers(powers));
        }
        Err(bad())
    }
}

impl fmt::Display for StartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartSpec::Poly(0) => f.write_str("constant"),
            StartSpec::Poly(1) => f.write_str("linear"),
            StartSpec::Poly(2) => f.write_str("quadratic"),
            StartSpec::Poly(3) => f.write_str("cubic"),
            StartSpec::Poly(k) => write!(f, "poly({k})"),
            StartSpec::Spline { max_knots } => write!(f, "spline(max_knots={max_knots})"),
            StartSpec::Powers(p) => {
                let list: Vec<String> = p.iter().map(u32::to_string).collect();
                write!(f, "powers({})", list.join(","))
            }
        }
    }
}

pub fn parse_eb(s: &str) -> Result<EbMode, CliError> {
    let s = s.trim();
    Ok(match s {
        "local" => EbMode::Local,
        "global" => EbMode::Global,
        "parametric" => EbMode::Parametric,
        "stein" => EbMode::Stein,
        "profile-w0" => EbMode::Profile,
        _ => {
            let v = s
                .strip_prefix("fixed:")
                .and_then(|v| match v.trim() {
                    "inf" => Some(f64::INFINITY),
                    v => v.parse::<f64>().ok(),
                })
                .filter(|v| *v >= 0.0)
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "eb `{s}`: expected local, global, parametric, stein, profile-w0 or fixed:<w0>"
                    ))
                })?;
            EbMode::Fixed(v)
        }
    })
}

pub fn eb_to_string(eb: EbMode) -> String {
    match eb {
        EbMode::Fixed(w) if w.is_infinite() => "fixed:inf".into(),
        EbMode::Fixed(w) => format!("fixed:{w}"),
        other => other.name().into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hierarchy {
    /// Start curve fixed at its fitted coefficients.
    Off,
    /// Same computation as `Off`; kept as an explicit name.
    PlugIn,
    /// Averaging over `draws` sampled start curves.
    MonteCarlo,
}

impl FromStr for Hierarchy {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "off" => Ok(Hierarchy::Off),
            "plugin" => Ok(Hierarchy::PlugIn),
            "mc" => Ok(Hierarchy::MonteCarlo),
            other => Err(CliError::Config(format!("hierarchical `{other}`: expected off, plugin or mc"))),
        }
    }
}

impl fmt::Display for Hierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hierarchy::Off => "off",
            Hierarchy::PlugIn => "plugin",
            Hierarchy::MonteCarlo => "mc",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub kernel: Kernel,
    pub bandwidth: BandwidthSpec,
    pub cells: usize,
    pub start: StartSpec,
    pub eb: EbMode,
    pub hierarchical: Hierarchy,
    pub draws: usize,
    pub seed: u64,
    /// Credible band level.
    pub level: f64,
    pub dims: usize,
    /// Evaluation grid size (one covariate).
    pub grid: usize,
    /// Local polynomial order tested by the adaptive window rule.
    pub order: usize,
    /// Moving-average window applied to adaptive bandwidths.
    pub smooth: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::NormalLevel,
            kernel: Kernel::Epanechnikov,
            bandwidth: BandwidthSpec::Auto,
            cells: 10,
            start: StartSpec::Poly(1),
            eb: EbMode::Global,
            hierarchical: Hierarchy::Off,
            draws: locbayes_core::start_curves::DEFAULT_DRAWS,
            seed: 0,
            level: 0.90,
            dims: 1,
            grid: locbayes_core::data::DEFAULT_GRID_POINTS,
            order: 1,
            smooth: 5,
            out: PathBuf::from("locbayes-out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse `{}`", value.trim())))
}

impl RunConfig {
    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key.trim() {
            "model" => self.model = value.parse()?,
            "kernel" => self.kernel = value.parse().map_err(|e| CliError::Config(format!("{e}")))?,
            "bandwidth" => self.bandwidth = value.parse()?,
            "cells" => self.cells = parse_num("cells", value)?,
            "start" => self.start = value.parse()?,
            "eb" => self.eb = parse_eb(value)?,
            "hierarchical" => self.hierarchical = value.parse()?,
            "draws" => self.draws = parse_num("draws", value)?,
            "seed" => self.seed = parse_num("seed", value)?,
            "level" => self.level = parse_num("level", value)?,
            "dims" => self.dims = parse_num("dims", value)?,
            "grid" => self.grid = parse_num("grid", value)?,
            "order" => self.order = parse_num("order", value)?,
            "smooth" => self.smooth = parse_num("smooth", value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.parse_text(&text)?;
        Ok(cfg)
    }

    /// Rejects inconsistent combinations; warns about dubious ones.
    pub fn validate(&self) -> Result<(), CliError> {
        let eb = self.eb.name();
        if !self.model.eb_modes().contains(&eb) {
            return Err(CliError::Config(format!(
                "eb `{eb}` is not available for {}; choose one of {}",
                self.model,
                self.model.eb_modes().join(", ")
            )));
        }
        if self.dims == 0 {
            return Err(CliError::Config("dims must be at least 1".into()));
        }
        if self.dims > 1 && self.model != ModelKind::MultivariateLinear {
            return Err(CliError::Config("several covariates need model multivariate-linear".into()));
        }
        if self.model == ModelKind::MultivariateLinear {
            if matches!(self.bandwidth, BandwidthSpec::Adaptive(_)) {
                return Err(CliError::Config("adaptive bandwidths are for one covariate".into()));
            }
            if !matches!(self.start, StartSpec::Poly(1) | StartSpec::Poly(2)) {
                return Err(CliError::Config("multivariate start surfaces are linear or quadratic".into()));
            }
        }
        if self.cells == 0 {
            return Err(CliError::Config("cells must be at least 1".into()));
        }
        if matches!(self.eb, EbMode::Stein) && self.cells < 3 {
            log::warn!("stein shrinkage with {} cells; dominance needs at least 3", self.cells);
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config("level must lie in (0, 1)".into()));
        }
        if self.grid < 2 {
            return Err(CliError::Config("grid needs at least 2 points".into()));
        }
        if self.order == 0 || self.order > 3 {
            return Err(CliError::Config("order must be 1, 2 or 3".into()));
        }
        if self.hierarchical == Hierarchy::MonteCarlo && self.draws == 0 {
            return Err(CliError::Config("mc averaging needs draws >= 1".into()));
        }
        Ok(())
    }

    /// The resolved configuration as `key = value` lines, parseable by
    /// [`RunConfig::parse_text`].
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.model.to_string()),
            ("kernel", self.kernel.name().to_string()),
            ("bandwidth", self.bandwidth.to_string()),
            ("cells", self.cells.to_string()),
            ("start", self.start.to_string()),
            ("eb", eb_to_string(self.eb)),
            ("hierarchical", self.hierarchical.to_string()),
            ("draws", self.draws.to_string()),
            ("seed", self.seed.to_string()),
            ("level", self.level.to_string()),
            ("dims", self.dims.to_string()),
            ("grid", self.grid.to_string()),
            ("order", self.order.to_string()),
            ("smooth", self.smooth.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }
}
