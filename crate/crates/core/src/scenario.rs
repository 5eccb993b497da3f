//! A complete pricing parameter set and cartesian sweeps over it.

use std::fmt;
use std::str::FromStr;

use crate::cds::{quanto_par_spread, CdsContract, QuantoParSpreads};
use crate::error::{Error, Result};
use crate::model::{HazardParams, QuantoFxParams, RatePair};
use crate::par;
use crate::pde::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub hazard: HazardParams,
    pub fx: QuantoFxParams,
    pub rates: RatePair,
    pub tenor: f64,
    pub recovery: f64,
}

/// Named reference parameter sets for the sensitivity studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Low-spread base case (`b < 0`, `σ_Z = 10%`) for `γ` and `ρ` sweeps.
    GammaRho,
    /// Base case with `ρ = 0.5` for `σ_Z` and `σ_Y` sweeps.
    FxVol,
    /// Base case with `b > 0` for `ρ` sweeps at several `σ_Y`.
    Correlation,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma-rho" => Ok(Self::GammaRho),
            "fx-vol" => Ok(Self::FxVol),
            "correlation" => Ok(Self::Correlation),
            _ => Err(Error::InvalidInput(format!(
                "unknown preset `{s}` (expected gamma-rho, fx-vol or correlation)"
            ))),
        }
    }
}

impl Scenario {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            hazard: HazardParams {
                a: 1e-4,
                b: -210.0,
                sigma_y: 0.2,
                y0: -4.089,
            },
            fx: QuantoFxParams {
                z0: 0.8,
                sigma_z: 0.1,
                gamma_z: 0.0,
                rho: 0.0,
            },
            rates: RatePair::flat(0.0),
            tenor: 5.0,
            recovery: 0.4,
        };
        match p {
            Preset::GammaRho => base,
            Preset::FxVol => Self {
                fx: QuantoFxParams { rho: 0.5, ..base.fx },
                ..base
            },
            Preset::Correlation => Self {
                hazard: HazardParams { b: 204.0, ..base.hazard },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hazard.validate()?;
        self.fx.validate()?;
        self.contract().map(|_| ())
    }

    pub fn contract(&self) -> Result<CdsContract> {
        CdsContract::new(self.tenor, self.recovery)
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::A => self.hazard.a,
            Param::B => self.hazard.b,
            Param::SigmaY => self.hazard.sigma_y,
            Param::Y0 => self.hazard.y0,
            Param::Z0 => self.fx.z0,
            Param::SigmaZ => self.fx.sigma_z,
            Param::Gamma => self.fx.gamma_z,
            Param::Rho => self.fx.rho,
            Param::Rate => self.rates.r,
            Param::RateHat => self.rates.r_hat,
            Param::Tenor => self.tenor,
            Param::Recovery => self.recovery,
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::A => self.hazard.a = v,
            Param::B => self.hazard.b = v,
            Param::SigmaY => self.hazard.sigma_y = v,
            Param::Y0 => self.hazard.y0 = v,
            Param::Z0 => self.fx.z0 = v,
            Param::SigmaZ => self.fx.sigma_z = v,
            Param::Gamma => self.fx.gamma_z = v,
            Param::Rho => self.fx.rho = v,
            Param::Rate => self.rates.r = v,
            Param::RateHat => self.rates.r_hat = v,
            Param::Tenor => self.tenor = v,
            Param::Recovery => self.recovery = v,
        }
    }

    pub fn par_spreads(&self, cfg: &SolverConfig) -> Result<QuantoParSpreads> {
        self.validate()?;
        quanto_par_spread(&self.hazard, &self.fx, self.rates, &self.contract()?, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    A,
    B,
    SigmaY,
    Y0,
    Z0,
    SigmaZ,
    Gamma,
    Rho,
    Rate,
    RateHat,
    Tenor,
    Recovery,
}

impl Param {
    pub const ALL: [Param; 12] = [
        Param::A,
        Param::B,
        Param::SigmaY,
        Param::Y0,
        Param::Z0,
        Param::SigmaZ,
        Param::Gamma,
        Param::Rho,
        Param::Rate,
        Param::RateHat,
        Param::Tenor,
        Param::Recovery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::A => "a",
            Param::B => "b",
            Param::SigmaY => "sigma_y",
            Param::Y0 => "y0",
            Param::Z0 => "z0",
            Param::SigmaZ => "sigma_z",
            Param::Gamma => "gamma",
            Param::Rho => "rho",
            Param::Rate => "r",
            Param::RateHat => "r_hat",
            Param::Tenor => "tenor",
            Param::Recovery => "recovery",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{s}`")))
    }
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepAxis {
    pub param: Param,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl SweepAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.from];
        }
        let n = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                if k + 1 == self.steps {
                    self.to
                } else {
                    self.from + (self.to - self.from) * k as f64 / n
                }
            })
            .collect()
    }
}

/// Parses `name:from:to:steps`.
impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidInput(format!("axis `{s}`: expected name:from:to:steps"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let param = parts[0].parse()?;
        let from: f64 = parts[1].parse().map_err(|_| bad())?;
        let to: f64 = parts[2].parse().map_err(|_| bad())?;
        let steps: usize = parts[3].parse().map_err(|_| bad())?;
        if steps == 0 || !from.is_finite() || !to.is_finite() {
            return Err(bad());
        }
        Ok(Self { param, from, to, steps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Axis values, in axis order.
    pub values: Vec<f64>,
    pub spreads: QuantoParSpreads,
}

/// Par spreads on the cartesian product of `axes`, last axis fastest.
pub fn sweep(base: &Scenario, axes: &[SweepAxis], cfg: &SolverConfig) -> Result<Vec<SweepPoint>> {
    for (k, a) in axes.iter().enumerate() {
        if axes[..k].iter().any(|b| b.param == a.param) {
            return Err(Error::InvalidInput(format!("axis `{}` given twice", a.param)));
        }
    }
    let grids: Vec<Vec<f64>> = axes.iter().map(SweepAxis::values).collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for g in &grids {
        points = points
            .into_iter()
            .flat_map(|p| {
                g.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    let scenarios: Vec<Scenario> = points
        .iter()
        .map(|vals| {
            let mut s = *base;
            for (a, &v) in axes.iter().zip(vals) {
                s.set(a.param, v);
            }
            s.validate().map(|_| s)
        })
        .collect::<Result<_>>()?;
    let spreads = par::map_slice(&scenarios, |s| s.par_spreads(cfg));
    points
        .into_iter()
        .zip(spreads)
        .map(|(values, s)| s.map(|spreads| SweepPoint { values, spreads }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a: SweepAxis = "rho:-1:1:5".parse().unwrap();
        assert_eq!(a.param, Param::Rho);
        assert_eq!(a.values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let one: SweepAxis = "gamma:-0.2:0.5:1".parse().unwrap();
        assert_eq!(one.values(), vec![-0.2]);
        assert!("bogus:0:1:2".parse::<SweepAxis>().is_err());
        assert!("rho:0:1".parse::<SweepAxis>().is_err());
        assert!("rho:0:1:0".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn param_names_round_trip() {
        for p in Param::ALL {
            assert_eq!(p.name().parse::<Param>().unwrap(), p);
        }
    }

    #[test]
    fn sweep_order_and_size() {
        let base = Scenario::preset(Preset::GammaRho);
        let cfg = SolverConfig::with_resolution(21, 31, 10);
        let axes = ["gamma:-0.5:0:2".parse().unwrap(), "rho:-0.5:0.5:3".parse().unwrap()];
        let pts = sweep(&base, &axes, &cfg).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].values, vec![-0.5, 0.0]);
        assert_eq!(pts[3].values, vec![0.0, -0.5]);
        assert!(pts[0].spreads.contractual.par_spread < pts[3].spreads.contractual.par_spread);
        let dup = ["rho:0:1:2".parse().unwrap(), "rho:0:1:2".parse().unwrap()];
        assert!(sweep(&base, &dup, &cfg).is_err());
        let bad = ["rho:0:2:2".parse().unwrap()];
        assert!(sweep(&base, &bad, &cfg).is_err());
    }
}
