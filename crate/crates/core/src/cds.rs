//! CDS cash flows: premium and protection legs, par spreads and the quanto
//! pipeline that prices the same contract in both currencies.

use crate::error::{Error, Result};
use crate::model::{HazardParams, QuantoFxParams, RatePair};
use crate::pde::{quanto_survival_surface, QuantoCurves, SolverConfig, SurvivalSurface};

const TENOR_EPS: f64 = 1e-9;

/// Survival probabilities at ascending tenors, interpolated log-linearly
/// (piecewise-constant forward hazard) with `p(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    tenors: Vec<f64>,
    probs: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(tenors: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if tenors.is_empty() || tenors.len() != probs.len() {
            return Err(Error::InvalidInput("curve needs matching, non-empty tenors and probabilities".into()));
        }
        if tenors[0] <= 0.0 || tenors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("curve tenors must be positive and strictly ascending".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput("survival probabilities must lie in [0, 1]".into()));
        }
        if probs.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            return Err(Error::InvalidInput("survival probabilities must be non-increasing".into()));
        }
        Ok(Self { tenors, probs })
    }

    /// `p(t) = exp(-λ t)` at the given tenors.
    pub fn flat(lambda: f64, tenors: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::param("lambda", lambda, "must be non-negative"));
        }
        let probs = tenors.iter().map(|t| (-lambda * t).exp()).collect();
        Self::new(tenors, probs)
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn horizon(&self) -> f64 {
        *self.tenors.last().unwrap()
    }

    pub fn survival(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(1.0);
        }
        let horizon = self.horizon();
        if t > horizon + TENOR_EPS {
            return Err(Error::CurveTooShort {
                requested: t,
                available: horizon,
            });
        }
        let k = self.tenors.partition_point(|&x| x < t);
        if k == self.tenors.len() {
            return Ok(self.probs[k - 1]);
        }
        let (t0, p0) = if k == 0 { (0.0, 1.0) } else { (self.tenors[k - 1], self.probs[k - 1]) };
        let (t1, p1) = (self.tenors[k], self.probs[k]);
        let w = (t - t0) / (t1 - t0);
        if w <= 0.0 {
            return Ok(p0);
        }
        if p1 == 0.0 {
            return Ok(0.0);
        }
        Ok(((1.0 - w) * p0.ln() + w * p1.ln()).exp())
    }
}

/// Deterministic piecewise-constant hazard `H(t)`; `rates[k]` applies up
/// to `ends[k]`, the last rate extends beyond the final end point.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseHazard {
    ends: Vec<f64>,
    rates: Vec<f64>,
}

impl PiecewiseHazard {
    pub fn new(ends: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() || ends.len() != rates.len() {
            return Err(Error::InvalidInput("hazard needs matching, non-empty end points and rates".into()));
        }
        if ends[0] <= 0.0 || ends.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("hazard end points must be positive and ascending".into()));
        }
        if let Some(&h) = rates.iter().find(|h| !(**h >= 0.0)) {
            return Err(Error::param("H", h, "hazard must be non-negative"));
        }
        Ok(Self { ends, rates })
    }

    pub fn flat(h: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![h])
    }

    /// `∫_0^t H(u) du`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut start = 0.0;
        for (k, (&end, &h)) in self.ends.iter().zip(&self.rates).enumerate() {
            let last = k + 1 == self.ends.len();
            let stop = if last { t } else { end.min(t) };
            if stop > start {
                acc += h * (stop - start);
            }
            if t <= end {
                break;
            }
            start = end;
        }
        acc
    }
}

pub fn deterministic_survival(hazard: &PiecewiseHazard, t: f64) -> f64 {
    (-hazard.integral(t.max(0.0))).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdsContract {
    /// Maturity in years.
    pub tenor: f64,
    /// Recovery fraction; loss given default is `1 - recovery`.
    pub recovery: f64,
    pub notional: f64,
    /// Premium periods per year.
    pub frequency: u32,
    /// Adds half a period of accrued premium on default.
    pub accrual_on_default: bool,
}

impl CdsContract {
    pub fn new(tenor: f64, recovery: f64) -> Result<Self> {
        let c = Self {
            tenor,
            recovery,
            notional: 1.0,
            frequency: 4,
            accrual_on_default: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_accrual_on_default(mut self, on: bool) -> Self {
        self.accrual_on_default = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tenor > 0.0) || !self.tenor.is_finite() {
            return Err(Error::param("tenor", self.tenor, "must be positive"));
        }
        if !(0.0..1.0).contains(&self.recovery) {
            return Err(Error::param("recovery", self.recovery, "must lie in [0, 1)"));
        }
        if !(self.notional > 0.0) {
            return Err(Error::param("notional", self.notional, "must be positive"));
        }
        if self.frequency == 0 {
            return Err(Error::InvalidInput("payment frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn lgd(&self) -> f64 {
        1.0 - self.recovery
    }

    /// Premium periods `(start, end)` rolled back from maturity in steps of
    /// `1/frequency`; a shorter first period absorbs the remainder.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        let step = 1.0 / self.frequency as f64;
        let mut ends = vec![self.tenor];
        let mut k = 1;
        loop {
            let t = self.tenor - k as f64 * step;
            if t <= TENOR_EPS {
                break;
            }
            ends.push(t);
            k += 1;
        }
        ends.reverse();
        let mut start = 0.0;
        ends.into_iter()
            .map(|end| {
                let p = (start, end);
                start = end;
                p
            })
            .collect()
    }

    pub fn payment_dates(&self) -> Vec<f64> {
        self.schedule().into_iter().map(|(_, e)| e).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParSpreadResult {
    pub par_spread: f64,
    /// Risky annuity per unit notional.
    pub premium_pv01: f64,
    pub protection_pv: f64,
}

fn check_cover(curve: &SurvivalCurve, contract: &CdsContract) -> Result<()> {
    contract.validate()?;
    if contract.tenor > curve.horizon() + TENOR_EPS {
        return Err(Error::CurveTooShort {
            requested: contract.tenor,
            available: curve.horizon(),
        });
    }
    Ok(())
}

/// `S Σ Δ_i e^{-r T_i} p(T_i)`, plus half-period accrual on default when
/// enabled.
pub fn premium_leg_pv(curve: &SurvivalCurve, r: f64, contract: &CdsContract, s: f64) -> Result<f64> {
    check_cover(curve, contract)?;
    let mut annuity = 0.0;
    for (start, end) in contract.schedule() {
        let delta = end - start;
        let p_end = curve.survival(end)?;
        annuity += delta * (-r * end).exp() * p_end;
        if contract.accrual_on_default {
            let p_start = curve.survival(start)?;
            annuity += 0.5 * delta * (-r * 0.5 * (start + end)).exp() * (p_start - p_end);
        }
    }
    Ok(contract.notional * s * annuity)
}

/// `LGD ∫ e^{-rt} (-dp)` on a weekly grid with midpoint discounting.
pub fn protection_leg_pv(curve: &SurvivalCurve, r: f64, contract: &CdsContract) -> Result<f64> {
    check_cover(curve, contract)?;
    let n = ((contract.tenor * 52.0).ceil() as usize).max(1);
    let dt = contract.tenor / n as f64;
    let mut acc = 0.0;
    let mut p_prev = 1.0;
    for k in 1..=n {
        let t = if k == n { contract.tenor } else { k as f64 * dt };
        let p = curve.survival(t)?;
        acc += (-r * (t - 0.5 * dt)).exp() * (p_prev - p);
        p_prev = p;
    }
    Ok(contract.notional * contract.lgd() * acc)
}

pub fn par_spread(curve: &SurvivalCurve, r: f64, contract: &CdsContract) -> Result<ParSpreadResult> {
    let premium_pv01 = premium_leg_pv(curve, r, contract, 1.0)? / contract.notional;
    if !(premium_pv01 > 0.0) {
        return Err(Error::Singular("risky annuity is zero"));
    }
    let protection_pv = protection_leg_pv(curve, r, contract)?;
    Ok(ParSpreadResult {
        par_spread: protection_pv / (contract.notional * premium_pv01),
        premium_pv01,
        protection_pv,
    })
}

/// Par spreads of the same contract in both currencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantoParSpreads {
    pub liquid: ParSpreadResult,
    pub contractual: ParSpreadResult,
}

impl QuantoParSpreads {
    /// `S_contractual / S_liquid`.
    pub fn ratio(&self) -> f64 {
        self.contractual.par_spread / self.liquid.par_spread
    }

    /// `S_contractual - S_liquid`.
    pub fn basis(&self) -> f64 {
        self.contractual.par_spread - self.liquid.par_spread
    }
}

/// Prices each side with its own survival curve and discount rate and a
/// single recovery shared by both.
pub fn par_spreads_from_curves(
    curves: &QuantoCurves,
    rates: RatePair,
    contract: &CdsContract,
) -> Result<QuantoParSpreads> {
    Ok(QuantoParSpreads {
        liquid: par_spread(&curves.p, rates.r, contract)?,
        contractual: par_spread(&curves.p_hat, rates.r_hat, contract)?,
    })
}

pub fn quanto_par_spread(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    contract: &CdsContract,
    cfg: &SolverConfig,
) -> Result<QuantoParSpreads> {
    Ok(quanto_par_spreads(h, fx, rates, std::slice::from_ref(contract), cfg)?[0])
}

/// Curve tenors covering every payment date of `contracts`.
pub fn pricing_tenors(contracts: &[CdsContract]) -> Vec<f64> {
    let mut t: Vec<f64> = contracts.iter().flat_map(|c| c.payment_dates()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup_by(|a, b| (*a - *b).abs() <= TENOR_EPS);
    t
}

/// Several contracts from a single PDE march over the union of their
/// payment dates.
pub fn quanto_par_spreads(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    contracts: &[CdsContract],
    cfg: &SolverConfig,
) -> Result<Vec<QuantoParSpreads>> {
    for c in contracts {
        c.validate()?;
    }
    let surface = quanto_survival_surface(h, fx, rates, &pricing_tenors(contracts), cfg)?;
    let curves = surface.curves_at(surface.spot_index)?;
    contracts
        .iter()
        .map(|c| par_spreads_from_curves(&curves, rates, c))
        .collect()
}

/// Par spreads at every log-intensity node of a solved surface.
pub fn spread_profile(
    surface: &SurvivalSurface,
    rates: RatePair,
    contract: &CdsContract,
) -> Result<Vec<QuantoParSpreads>> {
    (0..surface.y.len())
        .map(|j| par_spreads_from_curves(&surface.curves_at(j)?, rates, contract))
        .collect()
}
