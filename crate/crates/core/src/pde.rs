//! Finite-difference solver for the quanto bond pricing equation.
//!
//! The equation is solved in `x = ln z` and the log-intensity `y`, marching
//! forward in time-to-maturity `τ = T - t` from the payoff `v = e^x`:
//!
//! ```text
//! ∂τ v = (r - r̂ - ½σ_Z² - γ e^y) ∂x v + ½σ_Z² ∂xx v
//!      + a(b - y) ∂y v + ½σ_Y² ∂yy v + ρ σ_Z σ_Y ∂xy v - (r + e^y) v
//! ```
//!
//! The post-default value is identically zero (no recovery in the bond),
//! which is why the jump-to-default term reduces to the killing rate `e^y`
//! and the compensator `-γ e^y ∂x v`.
//!
//! Time stepping is Craig-Sneyd ADI with an explicit mixed derivative and a
//! Rannacher start of implicit half steps. The coefficients do not depend
//! on time, so a single march produces every tenor.

use crate::cds::SurvivalCurve;
use crate::error::{Error, Result};
use crate::model::{intensity, HazardParams, QuantoFxParams, RatePair};

const MIN_NODES: usize = 5;
const MIN_Y_HALF_WIDTH: f64 = 0.1;
const MIN_X_HALF_WIDTH: f64 = 0.05;
const BLOW_UP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Time-scheme weight; ½ is Crank-Nicolson-like.
    pub theta: f64,
    /// Number of leading steps replaced by two implicit half steps each.
    pub rannacher_steps: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Time steps per year of maturity.
    pub steps_per_year: usize,
    pub x_width_sds: f64,
    pub y_width_sds: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            rannacher_steps: 2,
            n_x: 101,
            n_y: 101,
            steps_per_year: 50,
            x_width_sds: 6.0,
            y_width_sds: 6.0,
        }
    }
}

impl SolverConfig {
    pub fn with_resolution(n_x: usize, n_y: usize, steps_per_year: usize) -> Self {
        Self {
            n_x,
            n_y,
            steps_per_year,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::param("theta", self.theta, "must lie in [0, 1]"));
        }
        if self.n_x < MIN_NODES || self.n_y < MIN_NODES {
            return Err(Error::InvalidInput(format!(
                "grid needs at least {MIN_NODES} nodes per axis (got {} x {})",
                self.n_x, self.n_y
            )));
        }
        if self.steps_per_year == 0 {
            return Err(Error::InvalidInput("steps_per_year must be positive".into()));
        }
        if !(self.x_width_sds > 0.0) || !(self.y_width_sds > 0.0) {
            return Err(Error::InvalidInput("domain widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Time-to-maturity nodes of the march.
    pub t: Vec<f64>,
}

impl Grid2D {
    fn hx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    fn hy(&self) -> f64 {
        self.y[1] - self.y[0]
    }
}

/// Value function `v(0, x, y)` for one maturity on the node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub tenor: f64,
    pub grid: Grid2D,
    /// Row-major values, index `i * n_y + j` for node `(x_i, y_j)`.
    pub values: Vec<f64>,
    pub config: SolverConfig,
    pub spot: (f64, f64),
}

impl PdeSolution {
    pub fn at_node(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.y.len() + j]
    }

    /// Bilinear interpolation in `(ln z, y)`, clamped to the grid.
    pub fn value_at(&self, z: f64, y: f64) -> f64 {
        let (i, wx) = locate(&self.grid.x, z.ln());
        let (j, wy) = locate(&self.grid.y, y);
        let v00 = self.at_node(i, j);
        let v01 = self.at_node(i, j + 1);
        let v10 = self.at_node(i + 1, j);
        let v11 = self.at_node(i + 1, j + 1);
        (1.0 - wx) * ((1.0 - wy) * v00 + wy * v01) + wx * ((1.0 - wy) * v10 + wy * v11)
    }

    /// `v` at the spot `(z0, y0)`.
    pub fn spot_value(&self) -> f64 {
        self.value_at(self.spot.0.exp(), self.spot.1)
    }

    /// Values along the `y` axis at the spot FX level.
    pub fn y_slice(&self) -> Vec<f64> {
        let (i, wx) = locate(&self.grid.x, self.spot.0);
        (0..self.grid.y.len())
            .map(|j| (1.0 - wx) * self.at_node(i, j) + wx * self.at_node(i + 1, j))
            .collect()
    }
}

fn locate(axis: &[f64], v: f64) -> (usize, f64) {
    let n = axis.len();
    if v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    let h = axis[1] - axis[0];
    let k = (((v - axis[0]) / h).floor() as usize).min(n - 2);
    (k, ((v - axis[k]) / h).clamp(0.0, 1.0))
}

fn check_tenors(tenors: &[f64]) -> Result<()> {
    if tenors.is_empty() {
        return Err(Error::InvalidInput("at least one tenor is required".into()));
    }
    if tenors.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("tenors must be positive".into()));
    }
    if tenors.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("tenors must be strictly ascending".into()));
    }
    Ok(())
}

/// Node axis of `n` points with spacing `(hi - lo)/(n - 1)`, shifted so
/// that `anchor` is a node.
fn anchored_axis(lo: f64, hi: f64, n: usize, anchor: f64) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    let k = ((anchor - lo) / h).round().clamp(1.0, (n - 2) as f64) as i64;
    (0..n as i64).map(|i| anchor + (i - k) as f64 * h).collect()
}

/// Log-intensity domain: the span of the OU mean under both measures out
/// to `horizon`, widened by `k` horizon standard deviations.
fn y_axis(h: &HazardParams, fx: &QuantoFxParams, horizon: f64, cfg: &SolverConfig) -> Vec<f64> {
    let shift = fx.rho * fx.sigma_z * h.sigma_y;
    let d = h.ou_decay_integral(horizon);
    let m_dom = h.y0 + h.a * (h.b - h.y0) * d;
    let m_for = m_dom + shift * d;
    let sd = h.ou_variance(horizon).sqrt();
    let lo = h.y0.min(m_dom).min(m_for) - cfg.y_width_sds * sd;
    let hi = h.y0.max(m_dom).max(m_for) + cfg.y_width_sds * sd;
    let (lo, hi) = (lo.min(h.y0 - MIN_Y_HALF_WIDTH), hi.max(h.y0 + MIN_Y_HALF_WIDTH));
    anchored_axis(lo, hi, cfg.n_y, h.y0)
}

fn x_axis(fx: &QuantoFxParams, horizon: f64, cfg: &SolverConfig) -> Vec<f64> {
    let x0 = fx.z0.ln();
    let w = (cfg.x_width_sds * fx.sigma_z * horizon.sqrt()).max(MIN_X_HALF_WIDTH);
    anchored_axis(x0 - w, x0 + w, cfg.n_x, x0)
}

/// Piecewise-uniform time grid hitting every tenor.
fn time_axis(tenors: &[f64], steps_per_year: usize, min_steps: &dyn Fn(f64) -> usize) -> Vec<f64> {
    let mut t = vec![0.0];
    let mut prev = 0.0;
    for &tenor in tenors {
        let span = tenor - prev;
        let n = ((span * steps_per_year as f64).ceil() as usize).max(1).max(min_steps(span));
        for k in 1..=n {
            t.push(if k == n { tenor } else { prev + span * k as f64 / n as f64 });
        }
        prev = tenor;
    }
    t
}

/// Cell Peclet number `|μ| h / 2D` above which the drift is upwinded.
const MAX_CELL_PECLET: f64 = 10.0;

/// Three-point stencil of `μ ∂ + D ∂²` on spacing `h`: central, upwinded
/// in the drift only in strongly convection-dominated cells.
fn stencil(mu: f64, diff: f64, h: f64) -> [f64; 3] {
    let d = diff / (h * h);
    if mu.abs() * h <= 2.0 * MAX_CELL_PECLET * diff {
        let c = mu / (2.0 * h);
        [d - c, -2.0 * d, d + c]
    } else if mu > 0.0 {
        [d, -2.0 * d - mu / h, d + mu / h]
    } else {
        [d - mu / h, -2.0 * d + mu / h, d]
    }
}

/// Stencil of `μ ∂ + D ∂²` in `x = ln z`, fitted to be exact on `e^x` and
/// on constants, so values proportional to `z` carry no `x` error. Same
/// upwinding rule as [`stencil`].
fn fitted_stencil(mu: f64, diff: f64, h: f64) -> [f64; 3] {
    let sh = (0.5 * h).sinh();
    let d = diff / (4.0 * sh * sh);
    if mu.abs() * h <= 2.0 * MAX_CELL_PECLET * diff {
        let c = mu / (2.0 * h.sinh());
        [d - c, -2.0 * d, d + c]
    } else if mu > 0.0 {
        let c = mu / h.exp_m1();
        [d, -2.0 * d - c, d + c]
    } else {
        let c = mu / -(-h).exp_m1();
        [d - c, -2.0 * d + c, d]
    }
}

/// Boundary node as a linear combination of its two inner neighbours:
/// `v_edge = alpha * v_next + beta * v_next2`.
#[derive(Debug, Clone, Copy)]
struct Closure {
    alpha: f64,
    beta: f64,
}

/// Thomas factorization of `I - s A` on the interior of a line, with the
/// boundary nodes eliminated through their closures.
#[derive(Debug, Clone)]
struct Tridiag {
    sub: Vec<f64>,
    inv_den: Vec<f64>,
    cp: Vec<f64>,
}

impl Tridiag {
    /// `rows[k]` is the stencil of interior node `k + 1`.
    fn new(rows: &[[f64; 3]], s: f64, lo: Closure, hi: Closure) -> Self {
        let m = rows.len();
        let mut a: Vec<f64> = rows.iter().map(|r| -s * r[0]).collect();
        let mut b: Vec<f64> = rows.iter().map(|r| 1.0 - s * r[1]).collect();
        let mut c: Vec<f64> = rows.iter().map(|r| -s * r[2]).collect();
        b[0] += a[0] * lo.alpha;
        c[0] += a[0] * lo.beta;
        a[0] = 0.0;
        b[m - 1] += c[m - 1] * hi.alpha;
        a[m - 1] += c[m - 1] * hi.beta;
        c[m - 1] = 0.0;
        let mut inv_den = vec![0.0; m];
        let mut cp = vec![0.0; m];
        for k in 0..m {
            let den = b[k] - if k > 0 { a[k] * cp[k - 1] } else { 0.0 };
            inv_den[k] = 1.0 / den;
            cp[k] = c[k] * inv_den[k];
        }
        Self { sub: a, inv_den, cp }
    }

    fn solve(&self, d: &mut [f64]) {
        let m = d.len();
        d[0] *= self.inv_den[0];
        for k in 1..m {
            d[k] = (d[k] - self.sub[k] * d[k - 1]) * self.inv_den[k];
        }
        for k in (0..m - 1).rev() {
            d[k] -= self.cp[k] * d[k + 1];
        }
    }
}

/// Spatial operator split into the mixed part `A0`, the `x` part `A1` and
/// the `y` part `A2`. The killing rate sits in `A1`, where it offsets the
/// jump compensator so that each split part is dissipative on its own.
struct Operator {
    nx: usize,
    ny: usize,
    a1: Vec<[f64; 3]>,
    a2: Vec<[f64; 3]>,
    mixed: f64,
    x_lo: Closure,
    x_hi: Closure,
    y_lo: Closure,
    y_hi: Closure,
    /// Bound on the spectral radius, for the explicit stability limit.
    spectral_bound: f64,
}

/// Coefficients of the pricing operator as functions of `y`.
struct Coefficients<'a> {
    x_drift: &'a dyn Fn(f64) -> f64,
    x_diff: f64,
    y_drift: &'a dyn Fn(f64) -> f64,
    y_diff: f64,
    cross: f64,
    killing: &'a dyn Fn(f64) -> f64,
}

impl Operator {
    fn new(grid: &Grid2D, c: &Coefficients) -> Self {
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut bound: f64 = 0.0;
        let a1: Vec<_> = grid
            .y
            .iter()
            .map(|&y| {
                let mut s = fitted_stencil((c.x_drift)(y), c.x_diff, hx);
                s[1] -= (c.killing)(y);
                s
            })
            .collect();
        let a2: Vec<_> = grid
            .y
            .iter()
            .map(|&y| stencil((c.y_drift)(y), c.y_diff, hy))
            .collect();
        for (p, q) in a1.iter().zip(&a2) {
            let r1 = p[0].abs() + p[1].abs() + p[2].abs();
            let r2 = q[0].abs() + q[1].abs() + q[2].abs();
            bound = bound.max(r1 + r2);
        }
        let mixed = c.cross / (4.0 * hx * hy);
        let ex = (-hx).exp();
        Self {
            nx: grid.x.len(),
            ny: grid.y.len(),
            a1,
            a2,
            mixed,
            // proportional to z = e^x at both ends
            x_lo: Closure { alpha: ex, beta: 0.0 },
            x_hi: Closure { alpha: 1.0 / ex, beta: 0.0 },
            // second-order zero slope
            y_lo: Closure { alpha: 4.0 / 3.0, beta: -1.0 / 3.0 },
            y_hi: Closure { alpha: 4.0 / 3.0, beta: -1.0 / 3.0 },
            spectral_bound: bound + 4.0 * mixed.abs(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    fn fill_boundaries(&self, v: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for i in 1..nx - 1 {
            let r = i * ny;
            v[r] = self.y_lo.alpha * v[r + 1] + self.y_lo.beta * v[r + 2];
            v[r + ny - 1] = self.y_hi.alpha * v[r + ny - 2] + self.y_hi.beta * v[r + ny - 3];
        }
        for j in 0..ny {
            v[j] = self.x_lo.alpha * v[ny + j] + self.x_lo.beta * v[2 * ny + j];
            v[(nx - 1) * ny + j] =
                self.x_hi.alpha * v[(nx - 2) * ny + j] + self.x_hi.beta * v[(nx - 3) * ny + j];
        }
    }

    fn apply_a0(&self, v: &[f64], out: &mut [f64]) {
        let ny = self.ny;
        for i in 1..self.nx - 1 {
            for j in 1..ny - 1 {
                let k = self.at(i, j);
                out[k] = self.mixed * (v[k + ny + 1] - v[k + ny - 1] - v[k - ny + 1] + v[k - ny - 1]);
            }
        }
    }

    fn apply_a1(&self, v: &[f64], out: &mut [f64]) {
        let ny = self.ny;
        for i in 1..self.nx - 1 {
            for j in 1..ny - 1 {
                let k = self.at(i, j);
                let s = &self.a1[j];
                out[k] = s[0] * v[k - ny] + s[1] * v[k] + s[2] * v[k + ny];
            }
        }
    }

    fn apply_a2(&self, v: &[f64], out: &mut [f64]) {
        for i in 1..self.nx - 1 {
            for j in 1..self.ny - 1 {
                let k = self.at(i, j);
                let s = &self.a2[j];
                out[k] = s[0] * v[k - 1] + s[1] * v[k] + s[2] * v[k + 1];
            }
        }
    }
}

/// Factorizations of the implicit line systems for one value of `θ dt`.
struct Factors {
    key: f64,
    x_lines: Vec<Tridiag>,
    y_line: Tridiag,
}

impl Factors {
    fn new(op: &Operator, s: f64) -> Self {
        let x_lines = (0..op.ny)
            .map(|j| Tridiag::new(&vec![op.a1[j]; op.nx - 2], s, op.x_lo, op.x_hi))
            .collect();
        let y_line = Tridiag::new(&op.a2[1..op.ny - 1], s, op.y_lo, op.y_hi);
        Self { key: s, x_lines, y_line }
    }

    /// Solves the `x` lines in place on the interior of `v`.
    fn solve_x(&self, op: &Operator, v: &mut [f64], line: &mut [f64]) {
        let (nx, ny) = (op.nx, op.ny);
        let line = &mut line[..nx - 2];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                line[i - 1] = v[i * ny + j];
            }
            self.x_lines[j].solve(line);
            for i in 1..nx - 1 {
                v[i * ny + j] = line[i - 1];
            }
        }
    }

    fn solve_y(&self, op: &Operator, v: &mut [f64]) {
        let ny = op.ny;
        for i in 1..op.nx - 1 {
            let r = i * ny;
            self.y_line.solve(&mut v[r + 1..r + ny - 1]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Douglas,
    CraigSneyd,
}

struct Stepper<'a> {
    op: &'a Operator,
    cache: Vec<Factors>,
    f0: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    g0: Vec<f64>,
    y0: Vec<f64>,
    w: Vec<f64>,
    line: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(op: &'a Operator) -> Self {
        let n = op.nx * op.ny;
        Self {
            op,
            cache: Vec::new(),
            f0: vec![0.0; n],
            f1: vec![0.0; n],
            f2: vec![0.0; n],
            g0: vec![0.0; n],
            y0: vec![0.0; n],
            w: vec![0.0; n],
            line: vec![0.0; op.nx],
        }
    }

    /// Advances `u` by `dt`. `source` is an explicit forcing term evaluated
    /// on the interior.
    fn step(&mut self, u: &mut [f64], dt: f64, theta: f64, scheme: Scheme, source: Option<&[f64]>) {
        let op = self.op;
        let s = theta * dt;
        let fk = match self.cache.iter().position(|f| f.key == s) {
            Some(k) => k,
            None => {
                self.cache.push(Factors::new(op, s));
                self.cache.len() - 1
            }
        };
        let fac = &self.cache[fk];
        let mixed = op.mixed != 0.0;
        if mixed {
            op.apply_a0(u, &mut self.f0);
        }
        op.apply_a1(u, &mut self.f1);
        op.apply_a2(u, &mut self.f2);
        let (nx, ny) = (op.nx, op.ny);
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                let k = i * ny + j;
                let mut inc = self.f1[k] + self.f2[k];
                if mixed {
                    inc += self.f0[k];
                }
                if let Some(src) = source {
                    inc += src[k];
                }
                self.y0[k] = u[k] + dt * inc;
            }
        }
        corrector(op, fac, s, &self.y0, &self.f1, &self.f2, &mut self.w, &mut self.line);
        if scheme == Scheme::CraigSneyd && mixed {
            op.apply_a0(&self.w, &mut self.g0);
            for i in 1..nx - 1 {
                for j in 1..ny - 1 {
                    let k = i * ny + j;
                    self.y0[k] += 0.5 * dt * (self.g0[k] - self.f0[k]);
                }
            }
            corrector(op, fac, s, &self.y0, &self.f1, &self.f2, &mut self.w, &mut self.line);
        }
        u.copy_from_slice(&self.w);
    }
}

/// The two implicit line sweeps shared by every stage:
/// `(I - s A1) w = y0 - s A1 u`, then `(I - s A2) w' = w - s A2 u`.
#[allow(clippy::too_many_arguments)]
fn corrector(
    op: &Operator,
    fac: &Factors,
    s: f64,
    y0: &[f64],
    f1: &[f64],
    f2: &[f64],
    w: &mut [f64],
    line: &mut [f64],
) {
    let (nx, ny) = (op.nx, op.ny);
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let k = i * ny + j;
            w[k] = y0[k] - s * f1[k];
        }
    }
    fac.solve_x(op, w, line);
    op.fill_boundaries(w);
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let k = i * ny + j;
            w[k] -= s * f2[k];
        }
    }
    fac.solve_y(op, w);
    op.fill_boundaries(w);
}

/// Number of steps needed on a span so that an explicitly weighted part
/// (`θ < ½`) stays inside its stability bound.
fn stability_steps(theta: f64, spectral_bound: f64) -> impl Fn(f64) -> usize {
    move |span: f64| {
        if theta >= 0.5 || spectral_bound == 0.0 {
            return 1;
        }
        let dt_max = 2.0 / ((1.0 - 2.0 * theta) * spectral_bound);
        (span / dt_max).ceil() as usize
    }
}

fn check_finite(v: &[f64], scale: f64, tau: f64, detail: impl Fn(f64) -> String) -> Result<()> {
    let mut worst: f64 = 0.0;
    for &x in v {
        if !x.is_finite() {
            return Err(Error::Unstable { time: tau, detail: detail(f64::NAN) });
        }
        worst = worst.max(x.abs());
    }
    if worst > BLOW_UP * scale {
        return Err(Error::Unstable { time: tau, detail: detail(worst) });
    }
    Ok(())
}

/// Marches the coupled systems `ops` from `τ = 0` through `times`,
/// returning the states of the first system at the requested nodes.
/// `source(k, states)` forces system `k` explicitly.
fn march(
    ops: &[&Operator],
    init: Vec<Vec<f64>>,
    times: &[f64],
    outputs: &[usize],
    cfg: &SolverConfig,
    source: &dyn Fn(usize, &[Vec<f64>]) -> Option<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let mut steppers: Vec<_> = ops.iter().map(|op| Stepper::new(op)).collect();
    let mut states = init;
    let scale = states
        .iter()
        .flat_map(|s| s.iter())
        .fold(1.0f64, |m, x| m.max(x.abs()));
    let (nx, ny) = (ops[0].nx, ops[0].ny);
    let mut out = Vec::with_capacity(outputs.len());
    let mut next_out = 0;
    for n in 1..times.len() {
        let dt = times[n] - times[n - 1];
        let substeps: &[(f64, f64, Scheme)] = if n <= cfg.rannacher_steps {
            &[(0.5, 1.0, Scheme::Douglas), (0.5, 1.0, Scheme::Douglas)]
        } else {
            &[(1.0, cfg.theta, Scheme::CraigSneyd)]
        };
        for &(frac, theta, scheme) in substeps {
            let forcing: Vec<_> = (0..states.len()).map(|k| source(k, &states)).collect();
            for (k, st) in steppers.iter_mut().enumerate() {
                st.step(&mut states[k], frac * dt, theta, scheme, forcing[k].as_deref());
            }
        }
        for s in &states {
            check_finite(s, scale, times[n], |worst| {
                format!("grid {nx}x{ny}, dt {dt:.3e}, max |v| {worst:.3e}")
            })?;
        }
        while next_out < outputs.len() && outputs[next_out] == n {
            out.push(states[0].clone());
            next_out += 1;
        }
    }
    Ok(out)
}

struct Setup {
    grid: Grid2D,
    outputs: Vec<usize>,
}

fn setup(
    h: &HazardParams,
    fx: &QuantoFxParams,
    tenors: &[f64],
    cfg: &SolverConfig,
    bound_of: &dyn Fn(&Grid2D) -> f64,
) -> Result<Setup> {
    h.validate()?;
    fx.validate()?;
    cfg.validate()?;
    check_tenors(tenors)?;
    let horizon = *tenors.last().unwrap();
    let mut grid = Grid2D {
        x: x_axis(fx, horizon, cfg),
        y: y_axis(h, fx, horizon, cfg),
        t: Vec::new(),
    };
    let bound = bound_of(&grid);
    grid.t = time_axis(tenors, cfg.steps_per_year, &stability_steps(cfg.theta, bound));
    let outputs = tenors
        .iter()
        .map(|&t| grid.t.iter().position(|&g| g == t).unwrap())
        .collect();
    Ok(Setup { grid, outputs })
}

fn pricing_operator(h: &HazardParams, fx: &QuantoFxParams, rates: RatePair, grid: &Grid2D) -> Operator {
    let s2 = fx.sigma_z * fx.sigma_z;
    let (a, b, gamma) = (h.a, h.b, fx.gamma_z);
    let x_drift = move |y: f64| rates.r - rates.r_hat - 0.5 * s2 - gamma * intensity(y);
    let y_drift = move |y: f64| a * (b - y);
    let killing = move |y: f64| rates.r + intensity(y);
    Operator::new(
        grid,
        &Coefficients {
            x_drift: &x_drift,
            x_diff: 0.5 * s2,
            y_drift: &y_drift,
            y_diff: 0.5 * h.sigma_y * h.sigma_y,
            cross: fx.rho * fx.sigma_z * h.sigma_y,
            killing: &killing,
        },
    )
}

/// Post-default value operator: the FX rate keeps diffusing without the
/// compensator and nothing is killed.
fn post_default_operator(h: &HazardParams, fx: &QuantoFxParams, rates: RatePair, grid: &Grid2D) -> Operator {
    let s2 = fx.sigma_z * fx.sigma_z;
    let (a, b) = (h.a, h.b);
    let x_drift = move |_: f64| rates.r - rates.r_hat - 0.5 * s2;
    let y_drift = move |y: f64| a * (b - y);
    let killing = move |_: f64| rates.r;
    Operator::new(
        grid,
        &Coefficients {
            x_drift: &x_drift,
            x_diff: 0.5 * s2,
            y_drift: &y_drift,
            y_diff: 0.5 * h.sigma_y * h.sigma_y,
            cross: fx.rho * fx.sigma_z * h.sigma_y,
            killing: &killing,
        },
    )
}

fn payoff(grid: &Grid2D) -> Vec<f64> {
    let ny = grid.y.len();
    grid.x.iter().flat_map(|&x| std::iter::repeat_n(x.exp(), ny)).collect()
}

fn solutions(setup: Setup, tenors: &[f64], values: Vec<Vec<f64>>, cfg: &SolverConfig, spot: (f64, f64)) -> Vec<PdeSolution> {
    tenors
        .iter()
        .zip(values)
        .map(|(&tenor, values)| PdeSolution {
            tenor,
            grid: setup.grid.clone(),
            values,
            config: *cfg,
            spot,
        })
        .collect()
}

/// Quanto bond value function `v(0, z, y) = U_0(T)` for `v(T) = z`.
pub fn solve_quanto_pde(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    t: f64,
    cfg: &SolverConfig,
) -> Result<PdeSolution> {
    Ok(solve_quanto_pde_tenors(h, fx, rates, &[t], cfg)?.pop().unwrap())
}

/// [`solve_quanto_pde`] for an ascending strip of maturities in one march.
pub fn solve_quanto_pde_tenors(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    tenors: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<PdeSolution>> {
    let bound = |g: &Grid2D| pricing_operator(h, fx, rates, g).spectral_bound;
    let setup = setup(h, fx, tenors, cfg, &bound)?;
    let op = pricing_operator(h, fx, rates, &setup.grid);
    let values = march(&[&op], vec![payoff(&setup.grid)], &setup.grid.t, &setup.outputs, cfg, &|_, _| None)?;
    Ok(solutions(setup, tenors, values, cfg, (fx.z0.ln(), h.y0)))
}

/// Same problem solved with the post-default value `u` carried on its own
/// grid (zero terminal data) and fed back through the jump term
/// `e^y u(t, (1+γ) z, y)`.
pub fn solve_with_explicit_u(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    t: f64,
    cfg: &SolverConfig,
) -> Result<PdeSolution> {
    let bound = |g: &Grid2D| pricing_operator(h, fx, rates, g).spectral_bound;
    let setup = setup(h, fx, &[t], cfg, &bound)?;
    let grid = &setup.grid;
    let v_op = pricing_operator(h, fx, rates, grid);
    let u_op = post_default_operator(h, fx, rates, grid);
    let ny = grid.y.len();
    let jump_shift = (1.0 + fx.gamma_z).ln();
    let lambdas: Vec<f64> = grid.y.iter().map(|&y| intensity(y)).collect();
    let source = |k: usize, states: &[Vec<f64>]| {
        if k != 0 {
            return None;
        }
        let u = &states[1];
        let mut src = vec![0.0; u.len()];
        for (i, &x) in grid.x.iter().enumerate() {
            let (p, w) = locate(&grid.x, x + jump_shift);
            for j in 0..ny {
                let uj = (1.0 - w) * u[p * ny + j] + w * u[(p + 1) * ny + j];
                src[i * ny + j] = lambdas[j] * uj;
            }
        }
        Some(src)
    };
    let init = vec![payoff(grid), vec![0.0; grid.x.len() * ny]];
    let values = march(&[&v_op, &u_op], init, &grid.t, &setup.outputs, cfg, &source)?;
    Ok(solutions(setup, &[t], values, cfg, (fx.z0.ln(), h.y0)).pop().unwrap())
}

/// One-factor equation in `y` for `g` with `v = e^x g`:
/// `∂τ g = (a(b - y) + shift) ∂y g + ½σ_Y² ∂yy g - (rate + scale e^y) g`,
/// `g(0) = 1`. Returns `g` on `y_axis` at each output node.
fn solve_y_factor(
    h: &HazardParams,
    y_axis: &[f64],
    times: &[f64],
    outputs: &[usize],
    shift: f64,
    scale: f64,
    rate: f64,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let n = y_axis.len();
    let hy = y_axis[1] - y_axis[0];
    // reaction and transport split as in the two-factor stepper, which this
    // reproduces exactly on data proportional to `z`
    let rows: Vec<[f64; 3]> = y_axis
        .iter()
        .map(|&y| stencil(h.a * (h.b - y) + shift, 0.5 * h.sigma_y * h.sigma_y, hy))
        .collect();
    let react: Vec<f64> = y_axis.iter().map(|&y| -(rate + scale * intensity(y))).collect();
    let neumann = Closure { alpha: 4.0 / 3.0, beta: -1.0 / 3.0 };
    let fill = |g: &mut [f64]| {
        g[0] = neumann.alpha * g[1] + neumann.beta * g[2];
        g[n - 1] = neumann.alpha * g[n - 2] + neumann.beta * g[n - 3];
    };
    let mut cache: Vec<(f64, Tridiag)> = Vec::new();
    let mut g = vec![1.0; n];
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut out = Vec::with_capacity(outputs.len());
    let mut next_out = 0;
    for step in 1..times.len() {
        let dt = times[step] - times[step - 1];
        let subs: &[(f64, f64)] = if step <= cfg.rannacher_steps {
            &[(0.5, 1.0), (0.5, 1.0)]
        } else {
            &[(1.0, cfg.theta)]
        };
        for &(frac, theta) in subs {
            let d = frac * dt;
            let s = theta * d;
            let pos = match cache.iter().position(|(k, _)| *k == s) {
                Some(p) => p,
                None => {
                    cache.push((s, Tridiag::new(&rows[1..n - 1], s, neumann, neumann)));
                    cache.len() - 1
                }
            };
            for j in 1..n - 1 {
                let r = &rows[j];
                f1[j] = react[j] * g[j];
                f2[j] = r[0] * g[j - 1] + r[1] * g[j] + r[2] * g[j + 1];
                let y0 = g[j] + d * (f1[j] + f2[j]);
                w[j] = (y0 - s * f1[j]) / (1.0 - s * react[j]);
            }
            fill(&mut w);
            for j in 1..n - 1 {
                w[j] -= s * f2[j];
            }
            cache[pos].1.solve(&mut w[1..n - 1]);
            fill(&mut w);
            g.copy_from_slice(&w);
        }
        check_finite(&g, 1.0, times[step], |worst| {
            format!("grid {n} nodes, dt {dt:.3e}, max |g| {worst:.3e}")
        })?;
        while next_out < outputs.len() && outputs[next_out] == step {
            out.push(g.clone());
            next_out += 1;
        }
    }
    Ok(out)
}

/// The same bond priced under the contractual-currency measure: the
/// log-intensity drift gains `ρ σ_Z σ_Y`, the intensity becomes
/// `(1+γ) e^y`, and the value factorises as `e^x ĝ(y)` so only a
/// one-factor equation is solved. Broadcast onto the two-factor grid.
pub fn solve_foreign_measure_pde(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    t: f64,
    cfg: &SolverConfig,
) -> Result<PdeSolution> {
    let bound = |_: &Grid2D| 0.0;
    let mut cfg_1d = *cfg;
    if cfg.theta < 0.5 {
        // the one-factor route is always run implicitly enough to be stable
        cfg_1d.theta = 0.5;
    }
    let setup = setup(h, fx, &[t], &cfg_1d, &bound)?;
    let grid = &setup.grid;
    let shift = fx.rho * fx.sigma_z * h.sigma_y;
    let g = solve_y_factor(h, &grid.y, &grid.t, &setup.outputs, shift, 1.0 + fx.gamma_z, rates.r_hat, &cfg_1d)?;
    let g = &g[0];
    let values = grid
        .x
        .iter()
        .flat_map(|&x| g.iter().map(move |gj| x.exp() * gj))
        .collect();
    Ok(solutions(setup, &[t], vec![values], cfg, (fx.z0.ln(), h.y0)).pop().unwrap())
}

/// Survival probabilities in both currencies on the log-intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSurface {
    pub tenors: Vec<f64>,
    pub y: Vec<f64>,
    /// Index of the spot `y0` on the `y` axis.
    pub spot_index: usize,
    /// `p̂[tenor][y]`, contractual currency.
    pub p_hat: Vec<Vec<f64>>,
    /// `p[tenor][y]`, liquid currency.
    pub p: Vec<Vec<f64>>,
}

/// Contractual-currency survival `p̂ = U_0/(z0 B̂)` from the two-factor
/// solve and liquid-currency survival `p` from its `γ = σ_Z = 0`
/// reduction (a one-factor solve on the same `y` grid and time steps).
pub fn quanto_survival_surface(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    tenors: &[f64],
    cfg: &SolverConfig,
) -> Result<SurvivalSurface> {
    let bound = |g: &Grid2D| pricing_operator(h, fx, rates, g).spectral_bound;
    let setup = setup(h, fx, tenors, cfg, &bound)?;
    let grid = &setup.grid;
    let op = pricing_operator(h, fx, rates, grid);
    let values = march(&[&op], vec![payoff(grid)], &grid.t, &setup.outputs, cfg, &|_, _| None)?;
    let g = solve_y_factor(h, &grid.y, &grid.t, &setup.outputs, 0.0, 1.0, rates.r, cfg)?;
    let ny = grid.y.len();
    let i0 = grid.x.iter().position(|&x| x == fx.z0.ln()).unwrap();
    let spot_index = grid.y.iter().position(|&y| y == h.y0).unwrap();
    let p_hat = tenors
        .iter()
        .zip(&values)
        .map(|(&t, v)| {
            let k = 1.0 / (fx.z0 * rates.discount_hat(t));
            (0..ny).map(|j| v[i0 * ny + j] * k).collect()
        })
        .collect();
    let p = tenors
        .iter()
        .zip(g)
        .map(|(&t, g)| {
            let k = 1.0 / rates.discount(t);
            g.into_iter().map(|v| v * k).collect()
        })
        .collect();
    Ok(SurvivalSurface {
        tenors: tenors.to_vec(),
        y: grid.y.clone(),
        spot_index,
        p_hat,
        p,
    })
}

impl SurvivalSurface {
    /// Survival curves at the `j`-th log-intensity node.
    pub fn curves_at(&self, j: usize) -> Result<QuantoCurves> {
        let column = |s: &[Vec<f64>]| -> Vec<f64> {
            // clip round-off above one and tiny non-monotone wiggles
            let mut prev: f64 = 1.0;
            s.iter()
                .map(|row| {
                    prev = prev.min(row[j]).max(0.0);
                    prev
                })
                .collect()
        };
        Ok(QuantoCurves {
            p_hat: SurvivalCurve::new(self.tenors.clone(), column(&self.p_hat))?,
            p: SurvivalCurve::new(self.tenors.clone(), column(&self.p))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantoCurves {
    pub p_hat: SurvivalCurve,
    pub p: SurvivalCurve,
}

/// Survival curves in both currencies at the spot.
pub fn quanto_survival_curve(
    h: &HazardParams,
    fx: &QuantoFxParams,
    rates: RatePair,
    tenors: &[f64],
    cfg: &SolverConfig,
) -> Result<QuantoCurves> {
    let surface = quanto_survival_surface(h, fx, rates, tenors, cfg)?;
    surface.curves_at(surface.spot_index)
}

/// Liquid-currency survival on the log-intensity grid, from the one-factor
/// equation alone. Cheaper than [`quanto_survival_surface`] when only `p`
/// is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct LiquidSurface {
    pub tenors: Vec<f64>,
    pub y: Vec<f64>,
    pub spot_index: usize,
    /// `p[tenor][y]`.
    pub p: Vec<Vec<f64>>,
}

impl LiquidSurface {
    pub fn curve_at(&self, j: usize) -> Result<SurvivalCurve> {
        let mut prev: f64 = 1.0;
        let probs = self
            .p
            .iter()
            .map(|row| {
                prev = prev.min(row[j]).max(0.0);
                prev
            })
            .collect();
        SurvivalCurve::new(self.tenors.clone(), probs)
    }
}

pub fn liquid_survival_surface(h: &HazardParams, r: f64, tenors: &[f64], cfg: &SolverConfig) -> Result<LiquidSurface> {
    let fx = QuantoFxParams::flat(1.0);
    let mut cfg_1d = *cfg;
    cfg_1d.theta = cfg.theta.max(0.5);
    let setup = setup(h, &fx, tenors, &cfg_1d, &|_| 0.0)?;
    let grid = &setup.grid;
    let g = solve_y_factor(h, &grid.y, &grid.t, &setup.outputs, 0.0, 1.0, r, &cfg_1d)?;
    let p = tenors
        .iter()
        .zip(g)
        .map(|(&t, g)| {
            let k = (r * t).exp();
            g.into_iter().map(|v| v * k).collect()
        })
        .collect();
    Ok(LiquidSurface {
        tenors: tenors.to_vec(),
        spot_index: grid.y.iter().position(|&y| y == h.y0).unwrap(),
        y: grid.y.clone(),
        p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub config: SolverConfig,
    pub value: f64,
    /// Change from the previous resolution.
    pub delta: Option<f64>,
    /// Observed order from the last three resolutions.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// False when successive changes fail to shrink.
    pub monotone: bool,
}

/// What to solve in a convergence study: `p̂(T)` at the spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceProblem {
    pub hazard: HazardParams,
    pub fx: QuantoFxParams,
    pub rates: RatePair,
    pub tenor: f64,
}

fn refinement(a: &SolverConfig, b: &SolverConfig) -> f64 {
    let r = |p: usize, q: usize| q as f64 / p as f64;
    r(a.n_x - 1, b.n_x - 1)
        .max(r(a.n_y - 1, b.n_y - 1))
        .max(r(a.steps_per_year, b.steps_per_year))
}

/// Solves `problem` at each resolution (coarse to fine) and reports the
/// observed orders `ln(δ_{k-1}/δ_k) / ln(q)` with `q` the refinement ratio.
pub fn convergence_report(problem: &ConvergenceProblem, resolutions: &[SolverConfig]) -> Result<ConvergenceReport> {
    if resolutions.len() < 3 {
        return Err(Error::InvalidInput("convergence study needs at least three resolutions".into()));
    }
    let values = crate::par::map_slice(resolutions, |cfg| {
        let sol = solve_quanto_pde(&problem.hazard, &problem.fx, problem.rates, problem.tenor, cfg)?;
        Ok(sol.spot_value() / (problem.fx.z0 * problem.rates.discount_hat(problem.tenor)))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    let mut monotone = true;
    for k in 0..values.len() {
        let delta = (k > 0).then(|| values[k] - values[k - 1]);
        let order = (k > 1).then(|| {
            let d1 = (values[k - 1] - values[k - 2]).abs();
            let d2 = (values[k] - values[k - 1]).abs();
            let q = refinement(&resolutions[k - 1], &resolutions[k]);
            if d2 >= d1 && d1 > 1e-14 {
                monotone = false;
            }
            (d1 / d2).ln() / q.ln()
        });
        rows.push(ConvergenceRow {
            config: resolutions[k],
            value: values[k],
            delta,
            order,
        });
    }
    Ok(ConvergenceReport { rows, monotone })
}
