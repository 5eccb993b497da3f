//! Three-stage calibration to USD/EUR CDS quotes and backtest diagnostics.
//!
//! 1. `(b, y0)` from the USD 5Y and 10Y quotes (liquid pathway only).
//! 2. `σ_Y` from the 1M index option volatility, passed through or implied.
//! 3. `(b, y0, ρ, γ)` jointly from all four quotes, seeded by stage 1 and
//!    the relative 5Y basis.
//!
//! With the mean-reversion speed fixed near zero, `b` only enters through
//! the product `κ = a b`, so the optimizer works in `κ` and reports
//! `b = κ / a`.

use chrono::{Datelike, NaiveDate};

use crate::cds::{par_spread, par_spreads_from_curves, pricing_tenors, CdsContract, QuantoParSpreads};
use crate::error::{Error, Result};
use crate::mc::simulate_ou_terminal;
use crate::model::{devaluation_estimate, jpm_basis_slope, HazardParams, QuantoFxParams, RatePair};
use crate::par;
use crate::pde::{liquid_survival_surface, quanto_survival_surface, SolverConfig};

/// Market inputs for one date, all as decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketSnapshot {
    pub date: NaiveDate,
    pub spread_usd_5y: f64,
    pub spread_usd_10y: f64,
    pub spread_eur_5y: f64,
    pub spread_eur_10y: f64,
    /// At-the-money FX volatility, used as `σ_Z`.
    pub fx_atm_vol: f64,
    /// 1M at-the-money index option volatility; `None` when not quoted.
    pub index_option_vol_1m: Option<f64>,
    /// Common short rate for both currencies.
    pub rate: f64,
}

impl MarketSnapshot {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("spread_usd_5y", self.spread_usd_5y),
            ("spread_usd_10y", self.spread_usd_10y),
            ("spread_eur_5y", self.spread_eur_5y),
            ("spread_eur_10y", self.spread_eur_10y),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, v, "spread quotes must be positive"));
            }
        }
        if !(self.fx_atm_vol >= 0.0) {
            return Err(Error::param("fx_atm_vol", self.fx_atm_vol, "must be non-negative"));
        }
        if let Some(v) = self.index_option_vol_1m {
            if !(v >= 0.0) {
                return Err(Error::param("index_option_vol_1m", v, "must be non-negative"));
            }
        }
        if !self.rate.is_finite() {
            return Err(Error::param("rate", self.rate, "must be finite"));
        }
        Ok(())
    }

    pub fn rates(&self) -> RatePair {
        RatePair::flat(self.rate)
    }

    /// USD 5Y, USD 10Y, EUR 5Y, EUR 10Y.
    pub fn quotes(&self) -> [f64; 4] {
        [self.spread_usd_5y, self.spread_usd_10y, self.spread_eur_5y, self.spread_eur_10y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaYMode {
    /// `σ_Y` is the quoted option volatility.
    Passthrough,
    /// `σ_Y` reproduces the quoted 1M log-spread volatility.
    Implied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// Initial `γ`; `None` uses the relative 5Y basis.
    pub gamma0: Option<f64>,
    pub rho0: f64,
    pub a_fixed: f64,
    pub sigma_y_default: f64,
    pub sigma_y_mode: SigmaYMode,
    pub recovery: f64,
    /// Joint-fit tolerance on the largest quote residual.
    pub tolerance_bp: f64,
    /// Stage-1 tolerance.
    pub single_tolerance_bp: f64,
    pub max_iterations: usize,
    pub coarse: SolverConfig,
    pub fine: SolverConfig,
    /// Paths of the implied-volatility estimator.
    pub mc_paths: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            gamma0: None,
            rho0: 0.0,
            a_fixed: 1e-4,
            sigma_y_default: 0.5,
            sigma_y_mode: SigmaYMode::Passthrough,
            recovery: 0.4,
            tolerance_bp: 0.5,
            single_tolerance_bp: 0.1,
            max_iterations: 40,
            coarse: SolverConfig::with_resolution(80, 80, 60),
            fine: SolverConfig::with_resolution(121, 121, 100),
            mc_paths: 20_000,
            seed: 1,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_bp > 0.0) || !(self.single_tolerance_bp > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.a_fixed >= 0.0) {
            return Err(Error::param("a_fixed", self.a_fixed, "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.recovery) {
            return Err(Error::param("recovery", self.recovery, "must lie in [0, 1)"));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        self.coarse.validate()?;
        self.fine.validate()
    }

    fn contracts(&self) -> [CdsContract; 2] {
        [
            CdsContract::new(5.0, self.recovery).unwrap(),
            CdsContract::new(10.0, self.recovery).unwrap(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub date: NaiveDate,
    pub a: f64,
    pub b: f64,
    pub y0: f64,
    pub sigma_y: f64,
    pub rho: f64,
    pub gamma: f64,
    /// Model minus quote in bp: USD 5Y, USD 10Y, EUR 5Y, EUR 10Y.
    pub residuals_bp: [f64; 4],
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared residuals after each accepted step, one trace per
    /// optimizer stage (coarse grid, then fine grid).
    pub objective_history: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    pub fn hazard(&self) -> HazardParams {
        HazardParams {
            a: self.a,
            b: self.b,
            sigma_y: self.sigma_y,
            y0: self.y0,
        }
    }

    pub fn max_residual_bp(&self) -> f64 {
        self.residuals_bp.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Stage-1 output.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleCcyFit {
    pub b: f64,
    pub y0: f64,
    /// `a b`.
    pub kappa: f64,
    pub residuals_bp: [f64; 2],
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt with box projection and forward-difference Jacobian

struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
    fd_step: Vec<f64>,
}

struct LmOutcome {
    x: Vec<f64>,
    residuals: Vec<f64>,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn levenberg_marquardt<F>(f: &F, x0: &[f64], bounds: &Bounds, tol: f64, max_iter: usize) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for k in 0..n {
            x[k] = x[k].clamp(bounds.lower[k], bounds.upper[k]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut r = f(&x)?;
    let mut cost = sum_sq(&r);
    let mut history = vec![cost];
    let mut mu = 1e-3;
    let mut iterations = 0;
    while iterations < max_iter && max_abs(&r) >= tol {
        iterations += 1;
        // forward differences, stepping inward at an active upper bound
        let cols = par::map_indexed(n, |k| -> Result<Vec<f64>> {
            let mut xp = x.clone();
            let h = if x[k] + bounds.fd_step[k] > bounds.upper[k] {
                -bounds.fd_step[k]
            } else {
                bounds.fd_step[k]
            };
            xp[k] += h;
            let rp = f(&xp)?;
            Ok(rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect())
        });
        let jac = cols.into_iter().collect::<Result<Vec<_>>>()?;
        let jtj: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum()).collect())
            .collect();
        let jtr: Vec<f64> = (0..n).map(|i| jac[i].iter().zip(&r).map(|(a, b)| a * b).sum()).collect();
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[i][i] += mu * jtj[i][i].max(1e-12);
            }
            let Some(step) = solve_dense(a, jtr.iter().map(|v| -v).collect()) else {
                mu *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            project(&mut trial);
            if trial == x {
                break;
            }
            let rt = f(&trial)?;
            let ct = sum_sq(&rt);
            if ct < cost {
                x = trial;
                r = rt;
                cost = ct;
                history.push(cost);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(LmOutcome {
        converged: max_abs(&r) < tol,
        x,
        residuals: r,
        iterations,
        history,
    })
}

// ---------------------------------------------------------------------------
// Model spreads

fn hazard_from(kappa: f64, y0: f64, sigma_y: f64, cfg: &CalibrationConfig) -> HazardParams {
    let a = cfg.a_fixed;
    let b = if a > 0.0 { kappa / a } else { 0.0 };
    HazardParams { a, b, sigma_y, y0 }
}

/// USD 5Y and 10Y par spreads from the liquid curve alone.
fn liquid_spreads(h: &HazardParams, rate: f64, cfg: &CalibrationConfig, grid: &SolverConfig) -> Result<[f64; 2]> {
    let contracts = cfg.contracts();
    let surf = liquid_survival_surface(h, rate, &pricing_tenors(&contracts), grid)?;
    let curve = surf.curve_at(surf.spot_index)?;
    Ok([
        par_spread(&curve, rate, &contracts[0])?.par_spread,
        par_spread(&curve, rate, &contracts[1])?.par_spread,
    ])
}

/// Model par spreads for arbitrary contracts in both currencies.
pub fn model_spreads(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    contracts: &[CdsContract],
    grid: &SolverConfig,
) -> Result<Vec<QuantoParSpreads>> {
    let surf = quanto_survival_surface(h, fx, rates, &pricing_tenors(contracts), grid)?;
    let curves = surf.curves_at(surf.spot_index)?;
    contracts.iter().map(|c| par_spreads_from_curves(&curves, rates, c)).collect()
}

fn quoted_spreads(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    cfg: &CalibrationConfig,
    grid: &SolverConfig,
) -> Result<[f64; 4]> {
    let s = model_spreads(h, fx, rates, &cfg.contracts(), grid)?;
    Ok([
        s[0].liquid.par_spread,
        s[1].liquid.par_spread,
        s[0].contractual.par_spread,
        s[1].contractual.par_spread,
    ])
}

fn fx_params(snapshot: &MarketSnapshot, gamma: f64, rho: f64) -> QuantoFxParams {
    QuantoFxParams {
        z0: 1.0,
        sigma_z: snapshot.fx_atm_vol,
        gamma_z: gamma,
        rho,
    }
}

/// Quotes implied by known parameters, on the fine grid of `cfg`.
pub fn synthesize_snapshot(
    date: NaiveDate,
    h: &HazardParams,
    fx_vol: f64,
    gamma: f64,
    rho: f64,
    rate: f64,
    cfg: &CalibrationConfig,
) -> Result<MarketSnapshot> {
    let fx = QuantoFxParams::new(1.0, fx_vol, gamma, rho)?;
    let s = quoted_spreads(h, &fx, RatePair::flat(rate), cfg, &cfg.fine)?;
    Ok(MarketSnapshot {
        date,
        spread_usd_5y: s[0],
        spread_usd_10y: s[1],
        spread_eur_5y: s[2],
        spread_eur_10y: s[3],
        fx_atm_vol: fx_vol,
        index_option_vol_1m: Some(h.sigma_y),
        rate,
    })
}

/// Known parameters behind a synthetic snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueParams {
    pub hazard: HazardParams,
    pub gamma: f64,
    pub rho: f64,
}

const SYNTH_GAMMAS: [f64; 5] = [-0.4, -0.3, -0.2, -0.1, 0.0];
const SYNTH_RHOS: [f64; 4] = [-0.5, -0.1, 0.3, 0.6];
/// `(κ = a b, y0)` pairs.
const SYNTH_LEVELS: [(f64, f64); 4] = [(0.012, -4.4), (-0.021, -3.6), (0.005, -4.0), (0.0, -3.2)];
const SYNTH_SIGMA_Y: [f64; 3] = [0.4, 0.5, 0.6];
const SYNTH_FX_VOL: [f64; 3] = [0.08, 0.1, 0.12];

/// `n` snapshots on consecutive business days from `start`, priced from a
/// fixed design of known parameters: `γ` cycles fastest, then `ρ`; the
/// hazard level, `σ_Y` and FX volatility rotate independently.
pub fn synthetic_snapshots(
    n: usize,
    start: NaiveDate,
    rate: f64,
    cfg: &CalibrationConfig,
) -> Result<Vec<(MarketSnapshot, TrueParams)>> {
    cfg.validate()?;
    let mut dates = Vec::with_capacity(n);
    let mut d = start;
    while dates.len() < n {
        if d.weekday().number_from_monday() <= 5 {
            dates.push(d);
        }
        d = d.succ_opt().ok_or_else(|| Error::InvalidInput("date overflow".into()))?;
    }
    let design: Vec<(NaiveDate, TrueParams, f64)> = dates
        .into_iter()
        .enumerate()
        .map(|(k, date)| {
            let (kappa, y0) = SYNTH_LEVELS[(k + k / 5) % SYNTH_LEVELS.len()];
            let hazard = HazardParams {
                a: cfg.a_fixed,
                b: if cfg.a_fixed > 0.0 { kappa / cfg.a_fixed } else { 0.0 },
                sigma_y: SYNTH_SIGMA_Y[k % SYNTH_SIGMA_Y.len()],
                y0,
            };
            let truth = TrueParams {
                hazard,
                gamma: SYNTH_GAMMAS[k % SYNTH_GAMMAS.len()],
                rho: SYNTH_RHOS[(k / SYNTH_GAMMAS.len()) % SYNTH_RHOS.len()],
            };
            (date, truth, SYNTH_FX_VOL[(k / 2) % SYNTH_FX_VOL.len()])
        })
        .collect();
    par::map_slice(&design, |&(date, t, fx_vol)| {
        synthesize_snapshot(date, &t.hazard, fx_vol, t.gamma, t.rho, rate, cfg).map(|s| (s, t))
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Stage 1

const KAPPA_BOUNDS: (f64, f64) = (-2.0, 2.0);
const Y0_BOUNDS: (f64, f64) = (-15.0, 3.0);
const RHO_BOUNDS: (f64, f64) = (-1.0, 1.0);
const GAMMA_BOUNDS: (f64, f64) = (-0.999, 5.0);

/// Seed from the quote slope: hazard growing at `g = ln(S10/S5)/2.5`
/// between the 5Y and 10Y mid-points.
fn single_ccy_seed(s5: f64, s10: f64, sigma_y: f64, recovery: f64) -> (f64, f64) {
    let g = (s10 / s5).ln() / 2.5;
    let y0 = (s5 / (1.0 - recovery)).ln() - 2.5 * g;
    let kappa = g - 0.5 * sigma_y * sigma_y;
    (kappa, y0)
}

/// Fits `(b, y0)` to the USD 5Y and 10Y quotes at volatility `sigma_y`.
pub fn calibrate_single_ccy(snapshot: &MarketSnapshot, sigma_y: f64, cfg: &CalibrationConfig) -> Result<SingleCcyFit> {
    snapshot.validate()?;
    cfg.validate()?;
    let (k0, y0) = single_ccy_seed(snapshot.spread_usd_5y, snapshot.spread_usd_10y, sigma_y, cfg.recovery);
    let quotes = [snapshot.spread_usd_5y, snapshot.spread_usd_10y];
    let bounds = Bounds {
        lower: vec![KAPPA_BOUNDS.0, Y0_BOUNDS.0],
        upper: vec![KAPPA_BOUNDS.1, Y0_BOUNDS.1],
        fd_step: vec![1e-5, 1e-5],
    };
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let h = hazard_from(x[0], x[1], sigma_y, cfg);
        let s = liquid_spreads(&h, snapshot.rate, cfg, &cfg.fine)?;
        Ok(vec![(s[0] - quotes[0]) * 1e4, (s[1] - quotes[1]) * 1e4])
    };
    let out = levenberg_marquardt(&f, &[k0, y0], &bounds, cfg.single_tolerance_bp, cfg.max_iterations)?;
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            max_residual_bp: max_abs(&out.residuals),
        });
    }
    let h = hazard_from(out.x[0], out.x[1], sigma_y, cfg);
    Ok(SingleCcyFit {
        b: h.b,
        y0: h.y0,
        kappa: out.x[0],
        residuals_bp: [out.residuals[0], out.residuals[1]],
        iterations: out.iterations,
    })
}

// ---------------------------------------------------------------------------
// Stage 2

/// 1M volatility of the log 5Y USD spread implied by `h`: terminal OU
/// draws over one month mapped through the spread-versus-intensity profile
/// of a grid solve.
pub fn implied_log_spread_vol(h: &HazardParams, rate: f64, cfg: &CalibrationConfig) -> Result<f64> {
    const HORIZON: f64 = 1.0 / 12.0;
    let contract = cfg.contracts()[0];
    let surf = liquid_survival_surface(h, rate, &pricing_tenors(&[contract]), &cfg.coarse)?;
    let samples = simulate_ou_terminal(h, HORIZON, cfg.mc_paths, cfg.seed)?;
    let (y_lo, hy) = (surf.y[0], surf.y[1] - surf.y[0]);
    let last = surf.y.len() - 1;
    let cell = |y: f64| {
        let u = ((y - y_lo) / hy).clamp(0.0, last as f64);
        let k = (u.floor() as usize).min(last - 1);
        (k, u - k as f64)
    };
    // spreads only on the nodes the samples reach
    let lo = samples.iter().fold(f64::INFINITY, |m, &y| m.min(y));
    let hi = samples.iter().fold(f64::NEG_INFINITY, |m, &y| m.max(y));
    let (k_lo, k_hi) = (cell(lo).0, cell(hi).0 + 1);
    let log_spread = (k_lo..=k_hi)
        .map(|j| Ok(par_spread(&surf.curve_at(j)?, rate, &contract)?.par_spread.ln()))
        .collect::<Result<Vec<f64>>>()?;
    let interp = |y: f64| {
        let (k, w) = cell(y);
        (1.0 - w) * log_spread[k - k_lo] + w * log_spread[k + 1 - k_lo]
    };
    let n = samples.len() as f64;
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &y) in samples.iter().enumerate() {
        let v = interp(y);
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    Ok((m2 / (n - 1.0)).max(0.0).sqrt() / HORIZON.sqrt())
}

/// `σ_Y` for the snapshot. Returns the value and any warning raised.
pub fn calibrate_sigma_y(
    snapshot: &MarketSnapshot,
    fit: &SingleCcyFit,
    cfg: &CalibrationConfig,
) -> Result<(f64, Option<String>)> {
    let Some(quote) = snapshot.index_option_vol_1m else {
        return Ok((
            cfg.sigma_y_default,
            Some(format!("no index option quote; sigma_y set to {}", cfg.sigma_y_default)),
        ));
    };
    match cfg.sigma_y_mode {
        SigmaYMode::Passthrough => Ok((quote, None)),
        SigmaYMode::Implied => {
            if quote == 0.0 {
                return Ok((0.0, None));
            }
            let vol_at = |s: f64| {
                let h = HazardParams {
                    a: cfg.a_fixed,
                    b: fit.b,
                    sigma_y: s,
                    y0: fit.y0,
                };
                implied_log_spread_vol(&h, snapshot.rate, cfg)
            };
            let (mut lo, mut hi) = (0.0, (2.0 * quote).max(0.5));
            while vol_at(hi)? < quote {
                hi *= 2.0;
                if hi > 20.0 {
                    return Err(Error::NotConverged {
                        iterations: 0,
                        max_residual_bp: f64::NAN,
                    });
                }
            }
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if vol_at(mid)? < quote {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-7 {
                    break;
                }
            }
            Ok((0.5 * (lo + hi), None))
        }
    }
}

// ---------------------------------------------------------------------------
// Stage 3

/// Joint fit of `(b, y0, ρ, γ)` to the four quotes: iterations on the
/// coarse grid, then a polish on the fine grid that decides convergence.
pub fn calibrate_quanto(
    snapshot: &MarketSnapshot,
    seed: &SingleCcyFit,
    sigma_y: f64,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    snapshot.validate()?;
    cfg.validate()?;
    let quotes = snapshot.quotes();
    let rates = snapshot.rates();
    let gamma0 = match cfg.gamma0 {
        Some(g) => g,
        None => devaluation_estimate(snapshot.spread_eur_5y, snapshot.spread_usd_5y)?,
    }
    .clamp(GAMMA_BOUNDS.0, GAMMA_BOUNDS.1);
    let bounds = Bounds {
        lower: vec![KAPPA_BOUNDS.0, Y0_BOUNDS.0, RHO_BOUNDS.0, GAMMA_BOUNDS.0],
        upper: vec![KAPPA_BOUNDS.1, Y0_BOUNDS.1, RHO_BOUNDS.1, GAMMA_BOUNDS.1],
        fd_step: vec![1e-5, 1e-5, 1e-3, 1e-4],
    };
    let residuals = |grid: SolverConfig| {
        move |x: &[f64]| -> Result<Vec<f64>> {
            let h = hazard_from(x[0], x[1], sigma_y, cfg);
            let fx = fx_params(snapshot, x[3], x[2]);
            let s = quoted_spreads(&h, &fx, rates, cfg, &grid)?;
            Ok(s.iter().zip(&quotes).map(|(m, q)| (m - q) * 1e4).collect())
        }
    };
    let x0 = [seed.kappa, seed.y0, cfg.rho0, gamma0];
    let coarse = levenberg_marquardt(
        &residuals(cfg.coarse),
        &x0,
        &bounds,
        0.2 * cfg.tolerance_bp,
        cfg.max_iterations,
    )?;
    let fine = levenberg_marquardt(
        &residuals(cfg.fine),
        &coarse.x,
        &bounds,
        0.2 * cfg.tolerance_bp,
        cfg.max_iterations,
    )?;
    let h = hazard_from(fine.x[0], fine.x[1], sigma_y, cfg);
    let history = vec![coarse.history, fine.history];
    let r = &fine.residuals;
    Ok(CalibrationResult {
        date: snapshot.date,
        a: h.a,
        b: h.b,
        y0: h.y0,
        sigma_y,
        rho: fine.x[2],
        gamma: fine.x[3],
        residuals_bp: [r[0], r[1], r[2], r[3]],
        iterations: coarse.iterations + fine.iterations,
        converged: max_abs(r) < cfg.tolerance_bp,
        objective_history: history,
        warnings: Vec::new(),
    })
}

/// All three stages for one snapshot.
pub fn calibrate(snapshot: &MarketSnapshot, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    snapshot.validate()?;
    cfg.validate()?;
    let pilot_sigma = snapshot.index_option_vol_1m.unwrap_or(cfg.sigma_y_default);
    let mut fit = calibrate_single_ccy(snapshot, pilot_sigma, cfg)?;
    let (sigma_y, warning) = calibrate_sigma_y(snapshot, &fit, cfg)?;
    if sigma_y != pilot_sigma {
        fit = calibrate_single_ccy(snapshot, sigma_y, cfg)?;
    }
    let mut result = calibrate_quanto(snapshot, &fit, sigma_y, cfg)?;
    result.warnings.extend(warning);
    Ok(result)
}

// ---------------------------------------------------------------------------
// Backtest

/// Model-implied diagnostics for one calibrated date.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestRow {
    pub result: CalibrationResult,
    /// Liquid (USD) model spreads at 1Y, 5Y, 10Y.
    pub spreads_usd: [f64; 3],
    /// Contractual (EUR) model spreads at 1Y, 5Y, 10Y.
    pub spreads_eur: [f64; 3],
    /// Relative basis `(S_EUR - S_USD)/S_USD` at 1Y, 5Y, 10Y.
    pub relative_basis: [f64; 3],
    /// `σ_Y σ_Z ρ (rpv(10Y) - rpv(1Y))` with the USD risky annuities.
    pub jpm_slope: f64,
    /// Relative basis at 10Y minus relative basis at 1Y.
    pub basis_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestFailure {
    pub date: NaiveDate,
    pub message: String,
}

/// Ordinary least squares fit `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub rows: Vec<BacktestRow>,
    pub failures: Vec<BacktestFailure>,
    /// `γ` regressed on the relative 1Y basis.
    pub gamma_on_basis_1y: Option<LinearFit>,
    /// `γ` regressed on the relative 5Y basis.
    pub gamma_on_basis_5y: Option<LinearFit>,
}

fn diagnostics(snapshot: &MarketSnapshot, result: CalibrationResult, cfg: &CalibrationConfig) -> Result<BacktestRow> {
    let h = result.hazard();
    let fx = fx_params(snapshot, result.gamma, result.rho);
    let contracts = [
        CdsContract::new(1.0, cfg.recovery)?,
        CdsContract::new(5.0, cfg.recovery)?,
        CdsContract::new(10.0, cfg.recovery)?,
    ];
    let s = model_spreads(&h, &fx, snapshot.rates(), &contracts, &cfg.fine)?;
    let usd = [s[0].liquid.par_spread, s[1].liquid.par_spread, s[2].liquid.par_spread];
    let eur = [
        s[0].contractual.par_spread,
        s[1].contractual.par_spread,
        s[2].contractual.par_spread,
    ];
    let rb = [
        devaluation_estimate(eur[0], usd[0])?,
        devaluation_estimate(eur[1], usd[1])?,
        devaluation_estimate(eur[2], usd[2])?,
    ];
    let jpm = jpm_basis_slope(
        h.sigma_y,
        fx.sigma_z,
        fx.rho,
        s[0].liquid.premium_pv01,
        s[2].liquid.premium_pv01,
    );
    Ok(BacktestRow {
        result,
        spreads_usd: usd,
        spreads_eur: eur,
        relative_basis: rb,
        jpm_slope: jpm,
        basis_slope: rb[2] - rb[0],
    })
}

/// Calibrates every snapshot independently and collects diagnostics.
/// Dates that fail are reported and skipped.
pub fn backtest(snapshots: &[MarketSnapshot], cfg: &CalibrationConfig) -> Result<BacktestReport> {
    cfg.validate()?;
    let outcomes = par::map_slice(snapshots, |s| calibrate(s, cfg).and_then(|r| diagnostics(s, r, cfg)));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (s, o) in snapshots.iter().zip(outcomes) {
        match o {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(BacktestFailure {
                date: s.date,
                message: e.to_string(),
            }),
        }
    }
    let gammas: Vec<f64> = rows.iter().map(|r| r.result.gamma).collect();
    let rb1: Vec<f64> = rows.iter().map(|r| r.relative_basis[0]).collect();
    let rb5: Vec<f64> = rows.iter().map(|r| r.relative_basis[1]).collect();
    Ok(BacktestReport {
        gamma_on_basis_1y: linear_fit(&rb1, &gammas),
        gamma_on_basis_5y: linear_fit(&rb5, &gammas),
        rows,
        failures,
    })
}

/// Rolling Pearson correlation of daily log-returns of two dated series,
/// aligned on their common dates. Each output is dated at the window end.
pub fn historical_correlation(
    fx: &[(NaiveDate, f64)],
    spread: &[(NaiveDate, f64)],
    window: usize,
) -> Result<Vec<(NaiveDate, f64)>> {
    if window < 10 {
        return Err(Error::InvalidInput("correlation window must be at least 10".into()));
    }
    let mut a: Vec<_> = fx.to_vec();
    let mut b: Vec<_> = spread.to_vec();
    a.sort_by_key(|p| p.0);
    b.sort_by_key(|p| p.0);
    let mut joint = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                joint.push((a[i].0, a[i].1, b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    if joint.iter().any(|p| !(p.1 > 0.0) || !(p.2 > 0.0)) {
        return Err(Error::InvalidInput("series must be positive for log-returns".into()));
    }
    if joint.len() < window + 1 {
        return Err(Error::InvalidInput(format!(
            "{} common dates, need at least {}",
            joint.len(),
            window + 1
        )));
    }
    let returns: Vec<(NaiveDate, f64, f64)> = joint
        .windows(2)
        .map(|w| (w[1].0, (w[1].1 / w[0].1).ln(), (w[1].2 / w[0].2).ln()))
        .collect();
    Ok(returns
        .windows(window)
        .map(|w| {
            let n = w.len() as f64;
            let mx = w.iter().map(|p| p.1).sum::<f64>() / n;
            let my = w.iter().map(|p| p.2).sum::<f64>() / n;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for p in w {
                sxy += (p.1 - mx) * (p.2 - my);
                sxx += (p.1 - mx) * (p.1 - mx);
                syy += (p.2 - my) * (p.2 - my);
            }
            let c = if sxx > 0.0 && syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
            (w[w.len() - 1].0, c.clamp(-1.0, 1.0))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fast_cfg() -> CalibrationConfig {
        CalibrationConfig {
            coarse: SolverConfig::with_resolution(21, 41, 20),
            fine: SolverConfig::with_resolution(31, 51, 25),
            mc_paths: 4000,
            ..CalibrationConfig::default()
        }
    }

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 3, 1).unwrap()
    }

    #[test]
    fn dense_solver() {
        let x = solve_dense(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(x[0], 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.4, epsilon = 1e-14);
        assert!(solve_dense(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn lm_on_rosenbrock_residuals() {
        let f = |x: &[f64]| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let b = Bounds {
            lower: vec![-5.0, -5.0],
            upper: vec![5.0, 5.0],
            fd_step: vec![1e-7, 1e-7],
        };
        let out = levenberg_marquardt(&f, &[-1.2, 1.0], &b, 1e-8, 200).unwrap();
        assert!(out.converged);
        assert!(out.history.windows(2).all(|w| w[1] < w[0]));
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn single_ccy_round_trip() {
        let cfg = fast_cfg();
        let h = HazardParams::new(1e-4, 150.0, 0.3, -4.3).unwrap();
        let snap = synthesize_snapshot(date(), &h, 0.1, 0.0, 0.0, 0.01, &cfg).unwrap();
        let fit = calibrate_single_ccy(&snap, 0.3, &cfg).unwrap();
        assert!(fit.residuals_bp.iter().all(|r| r.abs() < 0.1));
        let s = liquid_spreads(&hazard_from(fit.kappa, fit.y0, 0.3, &cfg), 0.01, &cfg, &cfg.fine).unwrap();
        assert!((s[0] - snap.spread_usd_5y).abs() * 1e4 < 0.1);
        assert_abs_diff_eq!(fit.y0, -4.3, epsilon = 1e-3);
    }

    #[test]
    fn flat_curve_seed() {
        let cfg = fast_cfg();
        let mut snap = synthesize_snapshot(date(), &HazardParams::constant(0.0167).unwrap(), 0.1, 0.0, 0.0, 0.0, &cfg).unwrap();
        snap.spread_usd_5y = 0.01;
        snap.spread_usd_10y = 0.01;
        let fit = calibrate_single_ccy(&snap, 0.0, &cfg).unwrap();
        // flat quotes with a deterministic hazard: y0 near the triangle value
        assert!((fit.y0 - (0.01f64 / 0.6).ln()).abs() < 0.02, "{}", fit.y0);
    }

    #[test]
    fn degenerate_quotes_rejected() {
        let cfg = fast_cfg();
        let mut snap = synthesize_snapshot(date(), &HazardParams::constant(0.02).unwrap(), 0.1, 0.0, 0.0, 0.0, &cfg).unwrap();
        snap.spread_usd_5y = 0.0;
        assert!(matches!(calibrate_single_ccy(&snap, 0.2, &cfg), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn sigma_y_modes() {
        let cfg = fast_cfg();
        let h = HazardParams::new(1e-4, -210.0, 0.5, -4.089).unwrap();
        let mut snap = synthesize_snapshot(date(), &h, 0.1, 0.0, 0.0, 0.0, &cfg).unwrap();
        let fit = SingleCcyFit {
            b: h.b,
            y0: h.y0,
            kappa: h.a * h.b,
            residuals_bp: [0.0; 2],
            iterations: 0,
        };
        assert_eq!(calibrate_sigma_y(&snap, &fit, &cfg).unwrap(), (0.5, None));
        snap.index_option_vol_1m = None;
        let (s, w) = calibrate_sigma_y(&snap, &fit, &cfg).unwrap();
        assert_eq!(s, cfg.sigma_y_default);
        assert!(w.is_some());
        snap.index_option_vol_1m = Some(0.0);
        let implied = CalibrationConfig {
            sigma_y_mode: SigmaYMode::Implied,
            ..cfg
        };
        assert_eq!(calibrate_sigma_y(&snap, &fit, &implied).unwrap().0, 0.0);
        // the 5Y log-spread moves almost one-for-one with y when a ≈ 0
        snap.index_option_vol_1m = Some(0.5);
        let (s, _) = calibrate_sigma_y(&snap, &fit, &implied).unwrap();
        assert!((s / 0.5 - 1.0).abs() < 0.05, "{s}");
    }

    #[test]
    fn quanto_null_case() {
        let cfg = fast_cfg();
        let h = HazardParams::new(1e-4, 100.0, 0.3, -4.2).unwrap();
        let snap = synthesize_snapshot(date(), &h, 0.1, 0.0, 0.0, 0.0, &cfg).unwrap();
        let r = calibrate(&snap, &cfg).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.gamma.abs() < 0.01, "{}", r.gamma);
        for trace in &r.objective_history {
            assert!(trace.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn linear_fit_exact() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-14);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn correlation_identities() {
        let d0 = date();
        let s: Vec<_> = (0..40)
            .map(|k| (d0 + chrono::Days::new(k), 1.0 + 0.1 * ((k as f64) * 0.7).sin() + 0.01 * k as f64))
            .collect();
        let same = historical_correlation(&s, &s, 10).unwrap();
        assert!(same.iter().all(|p| (p.1 - 1.0).abs() < 1e-12));
        let inv: Vec<_> = s.iter().map(|p| (p.0, 1.0 / p.1)).collect();
        let neg = historical_correlation(&s, &inv, 10).unwrap();
        assert!(neg.iter().all(|p| (p.1 + 1.0).abs() < 1e-12));
        assert!(historical_correlation(&s, &s, 5).is_err());
        assert!(historical_correlation(&s[..5], &s, 10).is_err());
    }

    #[test]
    fn empty_backtest() {
        let r = backtest(&[], &fast_cfg()).unwrap();
        assert!(r.rows.is_empty() && r.failures.is_empty() && r.gamma_on_basis_1y.is_none());
    }

    #[test]
    fn synthetic_design_skips_weekends() {
        let start = NaiveDate::from_ymd_opt(2012, 1, 6).unwrap(); // a Friday
        let snaps = synthetic_snapshots(7, start, 0.01, &fast_cfg()).unwrap();
        assert_eq!(snaps.len(), 7);
        assert_eq!(snaps[1].0.date, NaiveDate::from_ymd_opt(2012, 1, 9).unwrap());
        assert!(snaps.iter().all(|(s, _)| s.date.weekday().number_from_monday() <= 5));
        assert_eq!(snaps[5].1.rho, SYNTH_RHOS[1]);
        for (s, t) in &snaps {
            s.validate().unwrap();
            assert_eq!(s.index_option_vol_1m, Some(t.hazard.sigma_y));
            if t.gamma < 0.0 {
                assert!(s.spread_eur_5y < s.spread_usd_5y);
            }
        }
    }
}
