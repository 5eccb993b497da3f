//! Monte Carlo engine for the joint hazard / FX / default system.
//!
//! Each path draws one Gaussian pair per time step (log-intensity shock and
//! FX shock) plus a single `Exp(1)` threshold for the Cox construction of
//! the default time. The log-intensity uses the exact OU transition, the
//! cumulative hazard is integrated with the trapezoidal rule and the FX
//! rate is stepped in log space with its default jump applied at the node
//! that closes the step containing `τ`.
//!
//! Paths use independent random substreams keyed by `(seed, path index)`,
//! and estimates are reduced block by block in a fixed order, so results do
//! not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    fx_jump_inverse, intensity, no_arb_drift_x, no_arb_drift_z, DefaultState, HazardParams,
    QuantoFxParams, RatePair,
};
use crate::par;

const BLOCK: usize = 1024;

const STREAM_OU: u64 = 1;
const STREAM_SURVIVAL: u64 = 2;
const STREAM_QUANTO: u64 = 3;
const STREAM_MARTINGALE: u64 = 4;
const STREAM_FOREIGN: u64 = 5;
const STREAM_SAMPLE: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Number of time steps over `horizon`.
    pub n_steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, horizon: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_paths,
            n_steps,
            horizon,
            seed,
            antithetic: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::param("horizon", self.horizon, "must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.horizon, self.n_steps)
    }
}

/// Mean, standard error and 95% confidence interval of a Monte Carlo average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn new(mean: f64, std_error: f64, n_paths: usize) -> Self {
        Self {
            mean,
            std_error,
            ci95_low: mean - 1.96 * std_error,
            ci95_high: mean + 1.96 * std_error,
            n_paths,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci95_low <= x && x <= self.ci95_high
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.mean * k, self.std_error * k.abs(), self.n_paths)
    }

    /// Distance to `x` in standard errors.
    pub fn z_score(&self, x: f64) -> f64 {
        let d = self.mean - x;
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d.abs() <= 1e-12 * (1.0 + x.abs()) {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    /// `|m1 - m2| <= k * sqrt(se1² + se2²)` for independent estimates.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        let se = self.std_error.hypot(other.std_error);
        (self.mean - other.mean).abs() <= k * se + 1e-12 * (1.0 + self.mean.abs())
    }
}

/// Which FX drift the simulation uses. `Uncompensated` drops the default
/// compensator and exists only as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftSpec {
    Compensated,
    Uncompensated,
}

pub fn uniform_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
    let n = n_steps as f64;
    (0..=n_steps).map(|k| horizon * k as f64 / n).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput("time grid needs at least two nodes".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidInput("time grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
    }
    Ok(())
}

fn node_index(grid: &[f64], t: f64) -> Result<usize> {
    let tol = 1e-9 * t.abs().max(1.0);
    grid.iter()
        .position(|&g| (g - t).abs() <= tol)
        .ok_or_else(|| Error::InvalidInput(format!("tenor {t} is not a node of the simulation grid")))
}

/// Random draws for one path. The antithetic twin replays the same stream
/// with mirrored variates.
pub(crate) struct Draws {
    rng: ChaCha8Rng,
    flip: bool,
}

impl Draws {
    pub(crate) fn new(seed: u64, stream: u64, index: u64, flip: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((stream << 40) | index);
        Self { rng, flip }
    }

    pub(crate) fn normal(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        if self.flip {
            -z
        } else {
            z
        }
    }

    pub(crate) fn unit_exponential(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        let u = if self.flip { 1.0 - u } else { u };
        -(1.0 - u).ln()
    }
}

/// Per-step constants of the exact OU transition and of the FX/hazard
/// shock correlation.
struct StepTable {
    dt: Vec<f64>,
    decay: Vec<f64>,
    std: Vec<f64>,
    /// `(1 - e^{-a dt}) / a`: weight of a constant drift over the step.
    drift_weight: Vec<f64>,
    /// Loading of the FX increment on the log-intensity shock.
    corr_load: Vec<f64>,
    /// Loading of the FX increment on its own shock.
    indep_load: Vec<f64>,
}

impl StepTable {
    fn new(h: &HazardParams, rho: f64, grid: &[f64]) -> Self {
        let unit = HazardParams { sigma_y: 1.0, ..*h };
        let n = grid.len() - 1;
        let mut t = StepTable {
            dt: Vec::with_capacity(n),
            decay: Vec::with_capacity(n),
            std: Vec::with_capacity(n),
            drift_weight: Vec::with_capacity(n),
            corr_load: Vec::with_capacity(n),
            indep_load: Vec::with_capacity(n),
        };
        for w in grid.windows(2) {
            let dt = w[1] - w[0];
            let unit_var = unit.ou_variance(dt);
            let dw = h.ou_decay_integral(dt);
            // cov(OU shock, ΔW_fx) = ρ σ_Y dw and var(OU shock) = σ_Y² unit_var
            let c = if unit_var > 0.0 { rho * dw / unit_var.sqrt() } else { 0.0 };
            t.dt.push(dt);
            t.decay.push((-h.a * dt).exp());
            t.std.push(h.ou_variance(dt).sqrt());
            t.drift_weight.push(dw);
            t.corr_load.push(c);
            t.indep_load.push((dt - c * c).max(0.0).sqrt());
        }
        t
    }

    fn len(&self) -> usize {
        self.dt.len()
    }

    /// One exact OU step, with an optional constant drift added to `a (b - y)`.
    #[inline]
    fn ou_step(&self, h: &HazardParams, k: usize, y: f64, extra_drift: f64, xi: f64) -> f64 {
        y * self.decay[k] + h.b * (1.0 - self.decay[k]) + extra_drift * self.drift_weight[k] + self.std[k] * xi
    }
}

#[derive(Default)]
struct PathBuffers {
    y: Vec<f64>,
    lambda: Vec<f64>,
    cum: Vec<f64>,
    dw: Vec<f64>,
    fx: Vec<f64>,
}

impl PathBuffers {
    fn reset(&mut self, n_nodes: usize) {
        for v in [&mut self.y, &mut self.lambda, &mut self.cum, &mut self.fx] {
            v.clear();
            v.resize(n_nodes, 0.0);
        }
        self.dw.clear();
        self.dw.resize(n_nodes - 1, 0.0);
    }
}

/// Log-intensity path on `grid` using the exact OU transition.
pub fn simulate_ou(params: &HazardParams, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    check_grid(grid)?;
    let steps = StepTable::new(params, 0.0, grid);
    let mut draws = Draws::new(seed, STREAM_OU, 0, false);
    let mut path = Vec::with_capacity(grid.len());
    let mut y = params.y0;
    path.push(y);
    for k in 0..steps.len() {
        y = steps.ou_step(params, k, y, 0.0, draws.normal());
        path.push(y);
    }
    Ok(path)
}

/// Terminal log-intensities `Y_T` of `n_paths` independent exact OU draws.
/// The underlying normals depend only on `(seed, path index)`, so results
/// for different parameters share their randomness.
pub fn simulate_ou_terminal(params: &HazardParams, horizon: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if !(horizon >= 0.0) {
        return Err(Error::param("horizon", horizon, "must be non-negative"));
    }
    let mean = params.ou_mean(params.y0, horizon);
    let sd = params.ou_variance(horizon).sqrt();
    Ok((0..n_paths)
        .map(|i| mean + sd * Draws::new(seed, STREAM_OU, i as u64, false).normal())
        .collect())
}

/// Trapezoidal cumulative hazard `∫_0^{t_k} λ ds` at every grid node.
pub fn cumulative_hazard(lambda_path: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(grid.len());
    fill_cumulative(lambda_path, grid, &mut cum);
    cum
}

fn fill_cumulative(lambda_path: &[f64], grid: &[f64], cum: &mut Vec<f64>) {
    cum.clear();
    cum.push(0.0);
    let mut acc = 0.0;
    for k in 1..grid.len() {
        acc += 0.5 * (lambda_path[k - 1] + lambda_path[k]) * (grid[k] - grid[k - 1]);
        cum.push(acc);
    }
}

/// Cumulative hazard at an arbitrary time, linear between nodes.
fn cumulative_at(cum: &[f64], grid: &[f64], t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let last = grid.len() - 1;
    if t >= grid[last] {
        return cum[last];
    }
    let k = grid.partition_point(|&g| g <= t) - 1;
    let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
    cum[k] + w * (cum[k + 1] - cum[k])
}

/// Cox default time: first `t` with `∫_0^t λ ≥ E`, linear in cumulative
/// hazard inside the crossing step.
pub fn simulate_default(lambda_path: &[f64], grid: &[f64], unit_exponential: f64) -> DefaultState {
    let cum = cumulative_hazard(lambda_path, grid);
    default_from_cumulative(&cum, grid, unit_exponential)
}

fn default_from_cumulative(cum: &[f64], grid: &[f64], e: f64) -> DefaultState {
    if e <= 0.0 {
        return DefaultState::Defaulted { tau: 0.0 };
    }
    for k in 1..cum.len() {
        if cum[k] >= e {
            let w = (e - cum[k - 1]) / (cum[k] - cum[k - 1]);
            let tau = grid[k - 1] + w * (grid[k] - grid[k - 1]);
            return DefaultState::Defaulted { tau };
        }
    }
    DefaultState::Alive
}

/// Brownian increments of the FX driver over each step, correlated at level
/// `rho` with the exact OU shocks `y_shocks` (one standard normal pair per
/// step, combined by Cholesky).
pub fn correlated_fx_increments(
    h: &HazardParams,
    rho: f64,
    grid: &[f64],
    y_shocks: &[f64],
    fx_shocks: &[f64],
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let n = grid.len() - 1;
    if y_shocks.len() != n || fx_shocks.len() != n {
        return Err(Error::InvalidInput("one shock pair per step is required".into()));
    }
    let steps = StepTable::new(h, rho, grid);
    Ok((0..n)
        .map(|k| steps.corr_load[k] * y_shocks[k] + steps.indep_load[k] * fx_shocks[k])
        .collect())
}

/// FX path under the liquid-currency measure given the hazard path, the
/// default state and the FX Brownian increments.
pub fn simulate_fx(
    fx: &QuantoFxParams,
    rates: RatePair,
    grid: &[f64],
    lambda_path: &[f64],
    default: DefaultState,
    fx_increments: &[f64],
) -> Result<Vec<f64>> {
    fx.validate()?;
    check_grid(grid)?;
    if lambda_path.len() != grid.len() || fx_increments.len() + 1 != grid.len() {
        return Err(Error::InvalidInput("path lengths do not match the grid".into()));
    }
    let cum = cumulative_hazard(lambda_path, grid);
    let mut out = vec![0.0; grid.len()];
    fx_path_into(fx, rates, grid, &cum, default, fx_increments, DriftSpec::Compensated, &mut out);
    Ok(out)
}

/// Stepping rule shared by every FX simulation: log-Euler with the step
/// drift `no_arb_drift_z` integrated against the trapezoidal hazard of the
/// pre-default part of the step, then the multiplicative jump at `τ`.
#[allow(clippy::too_many_arguments)]
fn fx_path_into(
    fx: &QuantoFxParams,
    rates: RatePair,
    grid: &[f64],
    cum: &[f64],
    default: DefaultState,
    dw: &[f64],
    drift: DriftSpec,
    out: &mut [f64],
) {
    let gamma = fx.gamma_z;
    let var_drift = 0.5 * fx.sigma_z * fx.sigma_z;
    let cum_tau = default
        .tau()
        .map(|tau| cumulative_at(cum, grid, tau))
        .unwrap_or(f64::INFINITY);
    let gamma_drift = match drift {
        DriftSpec::Compensated => gamma,
        DriftSpec::Uncompensated => 0.0,
    };
    let mut z = fx.z0;
    out[0] = z;
    for k in 0..dw.len() {
        let dt = grid[k + 1] - grid[k];
        let alive_hazard = cum[k + 1].min(cum_tau) - cum[k].min(cum_tau);
        let mu = no_arb_drift_z(rates, gamma_drift, alive_hazard / dt, 0.0);
        z *= ((mu - var_drift) * dt + fx.sigma_z * dw[k]).exp();
        if let Some(tau) = default.tau() {
            if tau <= grid[k + 1] && (tau > grid[k] || k == 0) {
                z *= 1.0 + gamma;
            }
        }
        out[k + 1] = z;
    }
}

/// Simulates `(Y, λ, Λ, W_fx, Z)` for one path under the liquid-currency
/// measure and returns the default state.
fn domestic_path(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    grid: &[f64],
    steps: &StepTable,
    draws: &mut Draws,
    buf: &mut PathBuffers,
    drift: DriftSpec,
) -> DefaultState {
    buf.reset(grid.len());
    let mut y = h.y0;
    buf.y[0] = y;
    buf.lambda[0] = intensity(y);
    for k in 0..steps.len() {
        let xi_y = draws.normal();
        let xi_z = draws.normal();
        y = steps.ou_step(h, k, y, 0.0, xi_y);
        buf.y[k + 1] = y;
        buf.lambda[k + 1] = intensity(y);
        buf.dw[k] = steps.corr_load[k] * xi_y + steps.indep_load[k] * xi_z;
    }
    let e = draws.unit_exponential();
    fill_cumulative(&buf.lambda, grid, &mut buf.cum);
    let default = default_from_cumulative(&buf.cum, grid, e);
    fx_path_into(fx, rates, grid, &buf.cum, default, &buf.dw, drift, &mut buf.fx);
    default
}

/// Accumulates `n_out` per-path statistics over `cfg.n_paths` paths.
fn estimate<F>(cfg: &SimConfig, stream: u64, n_out: usize, kernel: F) -> Vec<McEstimate>
where
    F: Fn(&mut Draws, &mut PathBuffers, &mut [f64]) + Sync + Send,
{
    let n_samples = if cfg.antithetic {
        cfg.n_paths.div_ceil(2)
    } else {
        cfg.n_paths
    };
    let n_blocks = n_samples.div_ceil(BLOCK);
    let blocks = par::map_indexed(n_blocks, |b| {
        let start = b * BLOCK;
        let end = (start + BLOCK).min(n_samples);
        let mut acc = Moments::new(n_out);
        let mut buf = PathBuffers::default();
        let mut out = vec![0.0; n_out];
        let mut twin = vec![0.0; n_out];
        for i in start..end {
            let mut draws = Draws::new(cfg.seed, stream, i as u64, false);
            kernel(&mut draws, &mut buf, &mut out);
            if cfg.antithetic {
                let mut draws = Draws::new(cfg.seed, stream, i as u64, true);
                kernel(&mut draws, &mut buf, &mut twin);
                for (o, t) in out.iter_mut().zip(&twin) {
                    *o = 0.5 * (*o + t);
                }
            }
            acc.push(&out);
        }
        acc
    });
    let mut total = Moments::new(n_out);
    for b in &blocks {
        total.merge(b);
    }
    total.estimates(cfg.n_paths)
}

/// Running means and centred second moments (Welford, merged with Chan's
/// formula).
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for (j, &v) in x.iter().enumerate() {
            let d = v - self.mean[j];
            self.mean[j] += d / self.count;
            self.m2[j] += d * (v - self.mean[j]);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let n = self.count + other.count;
        for j in 0..self.mean.len() {
            let d = other.mean[j] - self.mean[j];
            self.mean[j] += d * other.count / n;
            self.m2[j] += other.m2[j] + d * d * self.count * other.count / n;
        }
        self.count = n;
    }

    fn estimates(&self, n_paths: usize) -> Vec<McEstimate> {
        let n = self.count;
        self.mean
            .iter()
            .zip(&self.m2)
            .map(|(&m, &m2)| {
                let se = if n > 1.0 { (m2 / (n - 1.0) / n).max(0.0).sqrt() } else { 0.0 };
                McEstimate::new(m, se, n_paths)
            })
            .collect()
    }
}

fn check_tenor(t: f64, cfg: &SimConfig) -> Result<()> {
    if !(t >= 0.0) || t > cfg.horizon * (1.0 + 1e-12) {
        return Err(Error::param("T", t, "must lie in [0, horizon]"));
    }
    Ok(())
}

/// Survival probability `E[exp(-∫_0^T λ ds)]`, estimated pathwise from the
/// integrated intensity.
pub fn survival_probability_mc(h: &HazardParams, t: f64, cfg: &SimConfig) -> Result<McEstimate> {
    Ok(survival_curve_mc(h, &[t], cfg)?[0])
}

/// Survival probabilities for several tenors from one set of paths.
pub fn survival_curve_mc(h: &HazardParams, tenors: &[f64], cfg: &SimConfig) -> Result<Vec<McEstimate>> {
    h.validate()?;
    cfg.validate()?;
    for &t in tenors {
        check_tenor(t, cfg)?;
    }
    let grid = cfg.grid();
    let steps = StepTable::new(h, 0.0, &grid);
    Ok(estimate(cfg, STREAM_SURVIVAL, tenors.len(), |draws, buf, out| {
        buf.reset(grid.len());
        let mut y = h.y0;
        buf.lambda[0] = intensity(y);
        for k in 0..steps.len() {
            y = steps.ou_step(h, k, y, 0.0, draws.normal());
            buf.lambda[k + 1] = intensity(y);
        }
        fill_cumulative(&buf.lambda, &grid, &mut buf.cum);
        for (o, &t) in out.iter_mut().zip(tenors) {
            *o = (-cumulative_at(&buf.cum, &grid, t)).exp();
        }
    }))
}

/// Quanto defaultable zero-coupon bond: `U_0(T) = B(0,T) E[Z_T 1{τ>T}]`
/// and the contractual-currency survival `p̂ = U_0 / (z0 B̂(0,T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantoBondEstimate {
    pub tenor: f64,
    pub u0: McEstimate,
    pub p_hat: McEstimate,
}

pub fn quanto_bond_mc(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    t: f64,
    cfg: &SimConfig,
) -> Result<QuantoBondEstimate> {
    Ok(quanto_bond_curve_mc(h, fx, rates, &[t], cfg)?[0])
}

/// Same as [`quanto_bond_mc`] for several tenors; tenors must be grid nodes.
pub fn quanto_bond_curve_mc(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    tenors: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<QuantoBondEstimate>> {
    h.validate()?;
    fx.validate()?;
    cfg.validate()?;
    let grid = cfg.grid();
    let nodes = tenors
        .iter()
        .map(|&t| check_tenor(t, cfg).and_then(|_| node_index(&grid, t)))
        .collect::<Result<Vec<_>>>()?;
    let steps = StepTable::new(h, fx.rho, &grid);
    let est = estimate(cfg, STREAM_QUANTO, tenors.len(), |draws, buf, out| {
        let default = domestic_path(h, fx, rates, &grid, &steps, draws, buf, DriftSpec::Compensated);
        for (o, &k) in out.iter_mut().zip(&nodes) {
            *o = if default.survived_to(grid[k]) { buf.fx[k] } else { 0.0 };
        }
    });
    Ok(tenors
        .iter()
        .zip(est)
        .map(|(&t, e)| {
            let u0 = e.scaled(rates.discount(t));
            let p_hat = u0.scaled(1.0 / (fx.z0 * rates.discount_hat(t)));
            QuantoBondEstimate { tenor: t, u0, p_hat }
        })
        .collect())
}

/// `E[L_T]` with `L_T = Z_T B̂_T / (z0 B_T)`, the density of the
/// contractual-currency measure. Equals 1 under the compensated drift.
pub fn verify_rn_martingale(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    t: f64,
    cfg: &SimConfig,
    drift: DriftSpec,
) -> Result<McEstimate> {
    h.validate()?;
    fx.validate()?;
    cfg.validate()?;
    check_tenor(t, cfg)?;
    let grid = cfg.grid();
    let k = node_index(&grid, t)?;
    let steps = StepTable::new(h, fx.rho, &grid);
    let scale = (rates.r_hat - rates.r) * t;
    let est = estimate(cfg, STREAM_MARTINGALE, 1, |draws, buf, out| {
        domestic_path(h, fx, rates, &grid, &steps, draws, buf, drift);
        out[0] = buf.fx[k] / fx.z0 * scale.exp();
    });
    Ok(est[0])
}

/// Outcome of the dual FX construction check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FxSymmetryReport {
    pub gamma_z: f64,
    pub gamma_x: f64,
    /// Largest `|X_t Z_t - 1|` over the checked paths and nodes, with `X`
    /// stepped by its own dynamics on the shocks that drove `Z`.
    pub max_pathwise_error: f64,
    /// `p̂` from the `Z` simulation under the liquid-currency measure.
    pub p_hat_from_z: McEstimate,
    /// `p̂` from the `X` simulation under the contractual-currency measure.
    pub p_hat_from_x: McEstimate,
    /// Liquid-currency survival from the `Z` simulation.
    pub p_from_z: McEstimate,
    /// Liquid-currency survival re-weighted from the `X` simulation by `L_T`.
    pub p_from_x: McEstimate,
    /// `Ê[L_T]`, `L_T = X_T B_T / (x0 B̂_T)`.
    pub martingale_x: McEstimate,
}

impl FxSymmetryReport {
    pub fn agrees(&self, k_se: f64) -> bool {
        self.p_hat_from_z.agrees_with(&self.p_hat_from_x, k_se)
            && self.p_from_z.agrees_with(&self.p_from_x, k_se)
            && self.martingale_x.z_score(1.0).abs() <= k_se
            && self.max_pathwise_error < 1e-9
    }
}

const PATHWISE_CHECK_PATHS: usize = 256;

/// Checks the FX symmetry under the default jump. The liquid-currency
/// construction simulates `Z` with jump `γᶻ`; the contractual-currency one
/// simulates `X = 1/Z` directly with jump `γˣ = -γᶻ/(1+γᶻ)`, intensity
/// `(1+γᶻ) λ` and the Girsanov-shifted log-intensity drift. Both must
/// produce the same survival probabilities in each currency.
pub fn verify_fx_symmetry(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    t: f64,
    cfg: &SimConfig,
) -> Result<FxSymmetryReport> {
    h.validate()?;
    fx.validate()?;
    cfg.validate()?;
    check_tenor(t, cfg)?;
    let gamma_x = fx_jump_inverse(fx.gamma_z)?;
    let grid = cfg.grid();
    let k_t = node_index(&grid, t)?;
    let steps = StepTable::new(h, fx.rho, &grid);

    // (i) pathwise reciprocal on shared shocks
    let check_paths = cfg.n_paths.min(PATHWISE_CHECK_PATHS);
    let errors = par::map_indexed(check_paths, |i| {
        let mut draws = Draws::new(cfg.seed, STREAM_QUANTO, i as u64, false);
        let mut buf = PathBuffers::default();
        let default = domestic_path(h, fx, rates, &grid, &steps, &mut draws, &mut buf, DriftSpec::Compensated);
        let x = reciprocal_path(fx, gamma_x, rates, &grid, &buf.cum, default, &buf.dw);
        x.iter()
            .zip(&buf.fx)
            .map(|(x, z)| (x * z - 1.0).abs())
            .fold(0.0, f64::max)
    });
    let max_pathwise_error = errors.into_iter().fold(0.0, f64::max);

    // (ii) liquid-currency construction
    let disc_ratio = ((rates.r_hat - rates.r) * t).exp();
    let dom = estimate(cfg, STREAM_QUANTO, 2, |draws, buf, out| {
        let default = domestic_path(h, fx, rates, &grid, &steps, draws, buf, DriftSpec::Compensated);
        let alive = default.survived_to(grid[k_t]);
        out[0] = if alive { buf.fx[k_t] / fx.z0 * disc_ratio } else { 0.0 };
        out[1] = if alive { 1.0 } else { 0.0 };
    });

    // (iii) contractual-currency construction
    let shift = fx.rho * fx.sigma_z * h.sigma_y;
    let lambda_scale = 1.0 + fx.gamma_z;
    let x0 = 1.0 / fx.z0;
    let inv_disc_ratio = 1.0 / disc_ratio;
    let frn = estimate(cfg, STREAM_FOREIGN, 3, |draws, buf, out| {
        buf.reset(grid.len());
        let mut y = h.y0;
        buf.lambda[0] = lambda_scale * intensity(y);
        for k in 0..steps.len() {
            let xi_y = draws.normal();
            let xi_x = draws.normal();
            y = steps.ou_step(h, k, y, shift, xi_y);
            buf.lambda[k + 1] = lambda_scale * intensity(y);
            buf.dw[k] = steps.corr_load[k] * xi_y + steps.indep_load[k] * xi_x;
        }
        let e = draws.unit_exponential();
        fill_cumulative(&buf.lambda, &grid, &mut buf.cum);
        let default = default_from_cumulative(&buf.cum, &grid, e);
        foreign_fx_path_into(fx.sigma_z, x0, gamma_x, rates, &grid, &buf.cum, default, &buf.dw, &mut buf.fx);
        let lt = buf.fx[k_t] / x0 * inv_disc_ratio;
        let alive = default.survived_to(grid[k_t]);
        out[0] = if alive { 1.0 } else { 0.0 };
        out[1] = if alive { lt } else { 0.0 };
        out[2] = lt;
    });

    Ok(FxSymmetryReport {
        gamma_z: fx.gamma_z,
        gamma_x,
        max_pathwise_error,
        p_hat_from_z: dom[0],
        p_hat_from_x: frn[0],
        p_from_z: dom[1],
        p_from_x: frn[1],
        martingale_x: frn[2],
    })
}

/// `X` under the liquid-currency measure, stepped from its own SDE
/// `dX/X = (σ² - μ̄) dt - σ dW + γˣ dD`.
fn reciprocal_path(
    fx: &QuantoFxParams,
    gamma_x: f64,
    rates: RatePair,
    grid: &[f64],
    cum: &[f64],
    default: DefaultState,
    dw: &[f64],
) -> Vec<f64> {
    let s2 = fx.sigma_z * fx.sigma_z;
    let cum_tau = default
        .tau()
        .map(|tau| cumulative_at(cum, grid, tau))
        .unwrap_or(f64::INFINITY);
    let mut x = 1.0 / fx.z0;
    let mut out = Vec::with_capacity(grid.len());
    out.push(x);
    for k in 0..dw.len() {
        let dt = grid[k + 1] - grid[k];
        let alive_hazard = cum[k + 1].min(cum_tau) - cum[k].min(cum_tau);
        let mu_z = no_arb_drift_z(rates, fx.gamma_z, alive_hazard / dt, 0.0);
        x *= ((s2 - mu_z - 0.5 * s2) * dt - fx.sigma_z * dw[k]).exp();
        if let Some(tau) = default.tau() {
            if tau <= grid[k + 1] && (tau > grid[k] || k == 0) {
                x *= 1.0 + gamma_x;
            }
        }
        out.push(x);
    }
    out
}

/// `X` under the contractual-currency measure with the jump-compensated
/// drift `no_arb_drift_x`; `cum` is the cumulative foreign intensity.
#[allow(clippy::too_many_arguments)]
fn foreign_fx_path_into(
    sigma: f64,
    x0: f64,
    gamma_x: f64,
    rates: RatePair,
    grid: &[f64],
    cum: &[f64],
    default: DefaultState,
    dw: &[f64],
    out: &mut [f64],
) {
    let cum_tau = default
        .tau()
        .map(|tau| cumulative_at(cum, grid, tau))
        .unwrap_or(f64::INFINITY);
    let mut x = x0;
    out[0] = x;
    for k in 0..dw.len() {
        let dt = grid[k + 1] - grid[k];
        let alive_hazard = cum[k + 1].min(cum_tau) - cum[k].min(cum_tau);
        let mu = no_arb_drift_x(rates, gamma_x, alive_hazard / dt, 0.0);
        x *= ((mu - 0.5 * sigma * sigma) * dt - sigma * dw[k]).exp();
        if let Some(tau) = default.tau() {
            if tau <= grid[k + 1] && (tau > grid[k] || k == 0) {
                x *= 1.0 + gamma_x;
            }
        }
        out[k + 1] = x;
    }
}

/// A few simulated paths for display: intensity, FX and default time.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub lambda: Vec<f64>,
    pub fx: Vec<f64>,
    pub tau: Option<f64>,
}

pub fn sample_paths(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, Vec<SamplePath>)> {
    h.validate()?;
    fx.validate()?;
    cfg.validate()?;
    let grid = cfg.grid();
    let steps = StepTable::new(h, fx.rho, &grid);
    let paths = (0..cfg.n_paths)
        .map(|i| {
            let mut draws = Draws::new(cfg.seed, STREAM_SAMPLE, i as u64, false);
            let mut buf = PathBuffers::default();
            let default = domestic_path(h, fx, rates, &grid, &steps, &mut draws, &mut buf, DriftSpec::Compensated);
            SamplePath {
                lambda: buf.lambda.clone(),
                fx: buf.fx.clone(),
                tau: default.tau(),
            }
        })
        .collect();
    Ok((grid, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn within(est: &McEstimate, x: f64, k: f64) -> bool {
        est.z_score(x).abs() <= k
    }

    #[test]
    fn degenerate_ou_is_constant() {
        let h = HazardParams::new(0.0, 1.0, 0.0, -3.0).unwrap();
        let grid = uniform_grid(2.0, 20);
        let path = simulate_ou(&h, &grid, 7).unwrap();
        assert!(path.iter().all(|&y| y == -3.0));
    }

    #[test]
    fn grid_validation() {
        let h = HazardParams::new(0.1, 0.0, 0.1, 0.0).unwrap();
        assert!(simulate_ou(&h, &[0.0], 1).is_err());
        assert!(simulate_ou(&h, &[0.1, 0.2], 1).is_err());
        assert!(simulate_ou(&h, &[0.0, 0.5, 0.5], 1).is_err());
    }

    #[test]
    fn ou_terminal_mean() {
        let h = HazardParams::new(0.08, 3.7, 0.2, -5.0).unwrap();
        let grid = uniform_grid(5.0, 5);
        let steps = StepTable::new(&h, 0.0, &grid);
        let cfg = SimConfig::new(100_000, 5, 5.0, 11).unwrap();
        let est = estimate(&cfg, 99, 1, |d, _, out| {
            let mut y = h.y0;
            for k in 0..steps.len() {
                y = steps.ou_step(&h, k, y, 0.0, d.normal());
            }
            out[0] = y;
        });
        let expected = -5.0 * (-0.4f64).exp() + 3.7 * (1.0 - (-0.4f64).exp());
        assert!(within(&est[0], expected, 3.0), "{:?} vs {expected}", est[0]);
    }

    #[test]
    fn ou_variance_a_to_zero() {
        let h = HazardParams::new(1e-12, 0.0, 0.3, 0.0).unwrap();
        let grid = uniform_grid(1.0, 1);
        let steps = StepTable::new(&h, 0.0, &grid);
        assert_abs_diff_eq!(steps.std[0] * steps.std[0], 0.09, epsilon = 1e-12);
    }

    #[test]
    fn default_edge_cases() {
        let grid = uniform_grid(5.0, 50);
        let zero = vec![0.0; grid.len()];
        assert_eq!(simulate_default(&zero, &grid, 0.3), DefaultState::Alive);
        let lam = vec![0.2; grid.len()];
        assert_eq!(simulate_default(&lam, &grid, 0.0), DefaultState::Defaulted { tau: 0.0 });
        match simulate_default(&lam, &grid, 0.5) {
            DefaultState::Defaulted { tau } => assert_abs_diff_eq!(tau, 2.5, epsilon = 1e-12),
            s => panic!("unexpected {s:?}"),
        }
    }

    #[test]
    fn constant_intensity_default_frequency() {
        let lambda = 0.016746;
        let grid = uniform_grid(5.0, 10);
        let lam = vec![lambda; grid.len()];
        let cfg = SimConfig::new(100_000, 10, 5.0, 3).unwrap();
        let est = estimate(&cfg, 77, 1, |d, _, out| {
            let s = simulate_default(&lam, &grid, d.unit_exponential());
            out[0] = if s.survived_to(5.0) { 1.0 } else { 0.0 };
        });
        assert!(within(&est[0], 0.91968, 3.0), "{:?}", est[0]);
    }

    #[test]
    fn fx_trivial_and_jump() {
        let grid = uniform_grid(1.0, 4);
        let lam = vec![0.3; grid.len()];
        let dw = vec![0.1; 4];
        let flat = QuantoFxParams::new(1.3, 0.0, 0.0, 0.0).unwrap();
        let z = simulate_fx(&flat, RatePair::flat(0.02), &grid, &lam, DefaultState::Alive, &dw).unwrap();
        assert!(z.iter().all(|&v| (v - 1.3).abs() < 1e-14));

        let fx = QuantoFxParams::new(1.0, 0.0, -0.5, 0.0).unwrap();
        let rates = RatePair::default();
        let d = DefaultState::Defaulted { tau: 0.6 };
        let z = simulate_fx(&fx, rates, &grid, &lam, d, &dw).unwrap();
        // compensator drift 0.15 per year until tau, then the halving
        assert_abs_diff_eq!(z[2], (0.15f64 * 0.5).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(z[3], (0.15f64 * 0.6).exp() * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(z[4], z[3], epsilon = 1e-15);
    }

    #[test]
    fn gbm_expectation_without_jump() {
        let h = HazardParams::constant(0.03).unwrap();
        let fx = QuantoFxParams::new(0.8, 0.15, 0.0, 0.0).unwrap();
        let rates = RatePair::new(0.03, 0.01).unwrap();
        let cfg = SimConfig::new(50_000, 10, 2.0, 5).unwrap();
        let grid = cfg.grid();
        let steps = StepTable::new(&h, 0.0, &grid);
        let est = estimate(&cfg, 42, 1, |d, buf, out| {
            domestic_path(&h, &fx, rates, &grid, &steps, d, buf, DriftSpec::Compensated);
            out[0] = buf.fx[grid.len() - 1];
        });
        assert!(within(&est[0], 0.8 * (0.04f64).exp(), 3.0), "{:?}", est[0]);
    }

    #[test]
    fn correlated_increments_have_target_correlation() {
        let h = HazardParams::new(0.5, 0.0, 0.3, 0.0).unwrap();
        let rho = 0.6;
        let grid = uniform_grid(1.0, 1);
        let steps = StepTable::new(&h, rho, &grid);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        let mut d = Draws::new(1, 999, 0, false);
        let n = 200_000;
        for _ in 0..n {
            let xi_y = d.normal();
            let xi_z = d.normal();
            let oy = steps.std[0] * xi_y;
            let w = steps.corr_load[0] * xi_y + steps.indep_load[0] * xi_z;
            sxy += oy * w;
            sxx += oy * oy;
            syy += w * w;
        }
        let dw = h.ou_decay_integral(1.0);
        let exact = rho * dw / (h.ou_variance(1.0) / 0.09).sqrt();
        let corr = sxy / (sxx * syy).sqrt();
        assert!((corr - exact).abs() < 0.01, "{corr} vs {exact}");
        assert!((syy / n as f64 - 1.0).abs() < 0.01);
    }
}
