//! Command-line flags, config-file merging and the validated run config.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qcds_core::calibration::{CalibrationConfig, SigmaYMode};
use qcds_core::io::parse_config;
use qcds_core::model::{HazardParams, QuantoFxParams, RatePair};
use qcds_core::pde::SolverConfig;
use qcds_core::scenario::{Preset, Scenario, SweepAxis};

#[derive(Debug, Parser)]
#[command(name = "qcds", version, about = "Quanto CDS pricing, validation and calibration")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Par spreads in both currencies and survival probabilities at the
    /// payment dates.
    Price,
    /// Survival curves in both currencies on a tenor grid.
    SurvivalCurve {
        /// Comma-separated tenors in years.
        #[arg(long, value_delimiter = ',')]
        tenors: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Monte Carlo bracketing and quanto-ratio deviation studies with
    /// pass/fail checks.
    Validate,
    /// Calibrates every row of a snapshot file.
    Calibrate {
        /// Snapshot CSV.
        snapshots: Option<PathBuf>,
    },
    /// Calibration with basis diagnostics and the regression of `γ` on the
    /// relative basis; `--synthetic N` generates the input.
    Backtest {
        snapshots: Option<PathBuf>,
        /// Generate N synthetic snapshots from a known parameter design.
        #[arg(long, conflicts_with = "snapshots")]
        synthetic: Option<usize>,
    },
    /// Par spreads over a cartesian grid of parameter values.
    Sweep {
        /// `name:from:to:steps`; repeat for more axes.
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Pde,
    Mc,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaMode {
    Passthrough,
    Implied,
}

#[derive(Debug, Default, Args)]
pub struct Global {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for CSV outputs.
    #[arg(long, global = true, env = "QCDS_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mc_paths: Option<usize>,
    #[arg(long, global = true)]
    pub mc_steps: Option<usize>,
    #[arg(long, global = true)]
    pub grid_x: Option<usize>,
    #[arg(long, global = true)]
    pub grid_y: Option<usize>,
    /// Time steps per year.
    #[arg(long, global = true)]
    pub grid_t: Option<usize>,
    #[arg(long, global = true)]
    pub tolerance_bp: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub sigma_y_mode: Option<SigmaMode>,

    /// Reference parameter set: gamma-rho, fx-vol or correlation.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_y: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub y0: Option<f64>,
    #[arg(long, global = true)]
    pub z0: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_z: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Liquid-currency rate.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub r: Option<f64>,
    /// Contractual-currency rate; defaults to `r`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub r_hat: Option<f64>,
    #[arg(long, global = true)]
    pub tenor: Option<f64>,
    #[arg(long, global = true)]
    pub recovery: Option<f64>,
    /// Adds half-period accrued premium on default.
    #[arg(long, global = true)]
    pub accrual_on_default: Option<bool>,
}

pub const CONFIG_KEYS: [&str; 26] = [
    "seed",
    "out_dir",
    "mc_paths",
    "mc_steps",
    "grid_x",
    "grid_y",
    "grid_t",
    "tolerance_bp",
    "sigma_y_mode",
    "preset",
    "a",
    "b",
    "sigma_y",
    "y0",
    "z0",
    "sigma_z",
    "gamma",
    "rho",
    "r",
    "r_hat",
    "tenor",
    "recovery",
    "accrual_on_default",
    "tenors",
    "method",
    "axis",
];

/// Problems with the invocation itself (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
    v.parse().map_err(|_| usage(format!("config key `{key}`: invalid value `{v}`")))
}

fn fill<T: FromStr>(slot: &mut Option<T>, key: &str, v: &str) -> Result<(), UsageError> {
    if slot.is_none() {
        *slot = Some(parse_value(key, v)?);
    }
    Ok(())
}

fn fill_enum<T: ValueEnum>(slot: &mut Option<T>, key: &str, v: &str) -> Result<(), UsageError> {
    if slot.is_none() {
        *slot = Some(T::from_str(v, false).map_err(|_| usage(format!("config key `{key}`: invalid value `{v}`")))?);
    }
    Ok(())
}

/// Command-specific values a config file may supply.
#[derive(Debug, Default)]
pub struct Extra {
    pub tenors: Option<Vec<f64>>,
    pub method: Option<Method>,
    pub axes: Vec<String>,
}

/// Fills unset flags from the config file.
pub fn merge_config(g: &mut Global, extra: &mut Extra) -> Result<(), UsageError> {
    let Some(path) = g.config.clone() else {
        return Ok(());
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let map = parse_config(&text, &CONFIG_KEYS).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    for (k, v) in &map {
        let v = v.as_str();
        match k.as_str() {
            "seed" => fill(&mut g.seed, k, v)?,
            "out_dir" => fill(&mut g.out_dir, k, v)?,
            "mc_paths" => fill(&mut g.mc_paths, k, v)?,
            "mc_steps" => fill(&mut g.mc_steps, k, v)?,
            "grid_x" => fill(&mut g.grid_x, k, v)?,
            "grid_y" => fill(&mut g.grid_y, k, v)?,
            "grid_t" => fill(&mut g.grid_t, k, v)?,
            "tolerance_bp" => fill(&mut g.tolerance_bp, k, v)?,
            "sigma_y_mode" => fill_enum(&mut g.sigma_y_mode, k, v)?,
            "preset" => fill(&mut g.preset, k, v)?,
            "a" => fill(&mut g.a, k, v)?,
            "b" => fill(&mut g.b, k, v)?,
            "sigma_y" => fill(&mut g.sigma_y, k, v)?,
            "y0" => fill(&mut g.y0, k, v)?,
            "z0" => fill(&mut g.z0, k, v)?,
            "sigma_z" => fill(&mut g.sigma_z, k, v)?,
            "gamma" => fill(&mut g.gamma, k, v)?,
            "rho" => fill(&mut g.rho, k, v)?,
            "r" => fill(&mut g.r, k, v)?,
            "r_hat" => fill(&mut g.r_hat, k, v)?,
            "tenor" => fill(&mut g.tenor, k, v)?,
            "recovery" => fill(&mut g.recovery, k, v)?,
            "accrual_on_default" => fill(&mut g.accrual_on_default, k, v)?,
            "tenors" => {
                if extra.tenors.is_none() {
                    extra.tenors = Some(
                        v.split(',')
                            .map(|t| parse_value::<f64>(k, t.trim()))
                            .collect::<Result<_, _>>()?,
                    );
                }
            }
            "method" => fill_enum(&mut extra.method, k, v)?,
            "axis" => {
                if extra.axes.is_empty() {
                    extra.axes = v.split(',').map(|s| s.trim().to_string()).collect();
                }
            }
            _ => unreachable!("parse_config rejects unknown keys"),
        }
    }
    Ok(())
}

/// Everything a command needs, validated up front.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub mc_paths: Option<usize>,
    pub mc_steps: Option<usize>,
    pub grid: SolverConfig,
    pub grid_overridden: bool,
    pub calibration: CalibrationConfig,
    pub scenario: Option<Scenario>,
    pub accrual_on_default: bool,
}

impl RunConfig {
    /// `need_model`: the command prices a single parameter set, so `y0`
    /// must be known.
    pub fn build(g: &Global, need_model: bool) -> Result<Self, UsageError> {
        let mut grid = SolverConfig::default();
        if let Some(n) = g.grid_x {
            grid.n_x = n;
        }
        if let Some(n) = g.grid_y {
            grid.n_y = n;
        }
        if let Some(n) = g.grid_t {
            grid.steps_per_year = n;
        }
        grid.validate().map_err(|e| usage(e.to_string()))?;
        let grid_overridden = g.grid_x.is_some() || g.grid_y.is_some() || g.grid_t.is_some();

        let mut calibration = CalibrationConfig {
            seed: g.seed.unwrap_or(1),
            ..CalibrationConfig::default()
        };
        if grid_overridden {
            calibration.fine = grid;
        }
        if let Some(t) = g.tolerance_bp {
            calibration.tolerance_bp = t;
        }
        if let Some(n) = g.mc_paths {
            calibration.mc_paths = n;
        }
        if let Some(m) = g.sigma_y_mode {
            calibration.sigma_y_mode = match m {
                SigmaMode::Passthrough => SigmaYMode::Passthrough,
                SigmaMode::Implied => SigmaYMode::Implied,
            };
        }
        if let Some(r) = g.recovery {
            calibration.recovery = r;
        }
        calibration.validate().map_err(|e| usage(e.to_string()))?;
        if g.mc_paths == Some(0) || g.mc_steps == Some(0) {
            return Err(usage("--mc-paths and --mc-steps must be positive"));
        }

        let scenario = if need_model { Some(scenario(g)?) } else { None };
        Ok(Self {
            seed: g.seed.unwrap_or(1),
            out_dir: g.out_dir.clone(),
            mc_paths: g.mc_paths,
            mc_steps: g.mc_steps,
            grid,
            grid_overridden,
            calibration,
            scenario,
            accrual_on_default: g.accrual_on_default.unwrap_or(false),
        })
    }
}

fn scenario(g: &Global) -> Result<Scenario, UsageError> {
    let preset = g
        .preset
        .as_deref()
        .map(|p| p.parse::<Preset>().map_err(|e| usage(e.to_string())))
        .transpose()?;
    let base = preset.map(Scenario::preset);
    let y0 = g
        .y0
        .or(base.map(|s| s.hazard.y0))
        .ok_or_else(|| usage("missing required parameter y0 (use --y0, a config file or --preset)"))?;
    let or = |v: Option<f64>, from_base: fn(&Scenario) -> f64, default: f64| {
        v.or(base.as_ref().map(from_base)).unwrap_or(default)
    };
    let r = or(g.r, |s| s.rates.r, 0.0);
    let s = Scenario {
        hazard: HazardParams {
            a: or(g.a, |s| s.hazard.a, 0.0),
            b: or(g.b, |s| s.hazard.b, 0.0),
            sigma_y: or(g.sigma_y, |s| s.hazard.sigma_y, 0.0),
            y0,
        },
        fx: QuantoFxParams {
            z0: or(g.z0, |s| s.fx.z0, 1.0),
            sigma_z: or(g.sigma_z, |s| s.fx.sigma_z, 0.0),
            gamma_z: or(g.gamma, |s| s.fx.gamma_z, 0.0),
            rho: or(g.rho, |s| s.fx.rho, 0.0),
        },
        rates: RatePair {
            r,
            r_hat: g.r_hat.or(base.map(|s| s.rates.r_hat)).unwrap_or(r),
        },
        tenor: or(g.tenor, |s| s.tenor, 5.0),
        recovery: or(g.recovery, |s| s.recovery, 0.4),
    };
    s.validate().map_err(|e| usage(e.to_string()))?;
    Ok(s)
}

pub fn parse_axes(raw: &[String]) -> Result<Vec<SweepAxis>, UsageError> {
    if raw.is_empty() {
        return Err(usage("sweep needs at least one --axis name:from:to:steps"));
    }
    raw.iter()
        .map(|s| s.parse::<SweepAxis>().map_err(|e| usage(e.to_string())))
        .collect()
}
