use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use qcds_core::calibration::{backtest, synthetic_snapshots, BacktestReport, MarketSnapshot, TrueParams};
use qcds_core::cds::{par_spreads_from_curves, pricing_tenors, CdsContract};
use qcds_core::io::{fmt_bp, fmt_param, read_snapshots, write_snapshots, Table};
use qcds_core::mc::{quanto_bond_curve_mc, survival_curve_mc, SimConfig};
use qcds_core::pde::quanto_survival_surface;
use qcds_core::scenario::{sweep, Scenario, SweepAxis};
use qcds_core::validation::{
    bracketing_hazard, bracketing_solver, bracketing_study, deviation_checks, deviation_hazard, deviation_table, reference_deviation_pct,
    reference_deviation_table, Check, DEVIATION_SIGMA_Z, DEVIATION_Y_HIGH, DEVIATION_Y_LOW,
};
use qcds_core::model::{HazardParams, RatePair};

use crate::args::{Method, RunConfig};

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Ok,
    /// Checks or per-item computations failed; outputs were still written.
    Failed(String),
}

struct Output<'a> {
    dir: Option<&'a Path>,
}

impl<'a> Output<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        if let Some(d) = &cfg.out_dir {
            fs::create_dir_all(d).with_context(|| format!("cannot create output directory {}", d.display()))?;
        }
        Ok(Self {
            dir: cfg.out_dir.as_deref(),
        })
    }

    fn table(&self, name: &str, t: &Table) -> Result<()> {
        if let Some(d) = self.dir {
            let path = d.join(name);
            fs::write(&path, t.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    }

    fn snapshots(&self, name: &str, s: &[MarketSnapshot]) -> Result<()> {
        if let Some(d) = self.dir {
            let path = d.join(name);
            let f = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
            write_snapshots(std::io::BufWriter::new(f), s)?;
        }
        Ok(())
    }
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn contract(s: &Scenario, cfg: &RunConfig) -> Result<CdsContract> {
    Ok(s.contract()?.with_accrual_on_default(cfg.accrual_on_default))
}

pub fn price(cfg: &RunConfig) -> Result<Outcome> {
    let s = cfg.scenario.expect("price needs a scenario");
    let c = contract(&s, cfg)?;
    let tenors = pricing_tenors(std::slice::from_ref(&c));
    let surface = quanto_survival_surface(&s.hazard, &s.fx, s.rates, &tenors, &cfg.grid)?;
    let curves = surface.curves_at(surface.spot_index)?;
    let q = par_spreads_from_curves(&curves, s.rates, &c)?;

    let mut spreads = Table::new(["currency", "par_spread_bp", "risky_annuity", "protection_pv"]);
    for (name, r) in [("liquid", q.liquid), ("contractual", q.contractual)] {
        spreads.push(vec![
            name.into(),
            fmt_bp(r.par_spread),
            fmt_param(r.premium_pv01),
            fmt_param(r.protection_pv),
        ]);
    }
    let mut surv = Table::new(["tenor", "p", "p_hat"]);
    for (k, &t) in tenors.iter().enumerate() {
        surv.push(vec![fmt_param(t), fmt_param(curves.p.probs()[k]), fmt_param(curves.p_hat.probs()[k])]);
    }
    let out = Output::new(cfg)?;
    out.table("price.csv", &spreads)?;
    out.table("survival.csv", &surv)?;
    print(&format!(
        "{}\nbasis {} bp, ratio {}\n\n{}",
        spreads.to_text(),
        fmt_bp(q.basis()),
        fmt_param(q.ratio()),
        surv.to_text()
    ));
    Ok(Outcome::Ok)
}

pub fn survival_curve(cfg: &RunConfig, tenors: Option<Vec<f64>>, method: Option<Method>) -> Result<Outcome> {
    let s = cfg.scenario.expect("survival-curve needs a scenario");
    let mut tenors = tenors.unwrap_or_else(|| (1..=10).map(f64::from).collect());
    tenors.sort_by(f64::total_cmp);
    tenors.dedup();
    if tenors.is_empty() || tenors[0] <= 0.0 {
        bail!("tenors must be positive");
    }
    let method = method.unwrap_or(Method::Pde);
    let horizon = *tenors.last().unwrap();
    let mut headers = vec!["tenor"];
    let mut cols: Vec<Vec<String>> = vec![tenors.iter().map(|&t| fmt_param(t)).collect()];
    if matches!(method, Method::Pde | Method::Both) {
        let surface = quanto_survival_surface(&s.hazard, &s.fx, s.rates, &tenors, &cfg.grid)?;
        let c = surface.curves_at(surface.spot_index)?;
        headers.extend(["p_pde", "p_hat_pde"]);
        cols.push(c.p.probs().iter().map(|&v| fmt_param(v)).collect());
        cols.push(c.p_hat.probs().iter().map(|&v| fmt_param(v)).collect());
    }
    if matches!(method, Method::Mc | Method::Both) {
        let steps = cfg.mc_steps.unwrap_or((50.0 * horizon).ceil() as usize);
        let sim = SimConfig::new(cfg.mc_paths.unwrap_or(100_000), steps, horizon, cfg.seed)?;
        let p = survival_curve_mc(&s.hazard, &tenors, &sim)?;
        let ph = quanto_bond_curve_mc(&s.hazard, &s.fx, s.rates, &tenors, &sim)?;
        headers.extend(["p_mc", "p_mc_se", "p_hat_mc", "p_hat_mc_se"]);
        cols.push(p.iter().map(|e| fmt_param(e.mean)).collect());
        cols.push(p.iter().map(|e| fmt_param(e.std_error)).collect());
        cols.push(ph.iter().map(|e| fmt_param(e.p_hat.mean)).collect());
        cols.push(ph.iter().map(|e| fmt_param(e.p_hat.std_error)).collect());
    }
    let mut t = Table::new(headers);
    for k in 0..tenors.len() {
        t.push(cols.iter().map(|c| c[k].clone()).collect());
    }
    Output::new(cfg)?.table("survival_curve.csv", &t)?;
    print(&t.to_text());
    Ok(Outcome::Ok)
}

const MATURITY_GAMMAS: [f64; 7] = [-0.99, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5];

pub fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let out = Output::new(cfg)?;
    let mut checks: Vec<Check> = Vec::new();

    // Monte Carlo bracketing
    let pde = if cfg.grid_overridden {
        cfg.grid
    } else {
        bracketing_solver()
    };
    let big = cfg.mc_paths.unwrap_or(1_000_000);
    let runs = [((big / 10).max(1000), 300), (big, cfg.mc_steps.unwrap_or(500))];
    let rows = bracketing_study(&bracketing_hazard(), 5.0, &pde, &runs, cfg.seed)?;
    let mut t = Table::new(["n_paths", "n_steps", "p_pde", "p_mc", "std_error", "ci95_low", "ci95_high", "inside"]);
    for r in &rows {
        t.push(vec![
            r.n_paths.to_string(),
            r.n_steps.to_string(),
            fmt_param(r.pde),
            fmt_param(r.mc.mean),
            fmt_param(r.mc.std_error),
            fmt_param(r.mc.ci95_low),
            fmt_param(r.mc.ci95_high),
            r.inside.to_string(),
        ]);
        checks.push(Check::new(
            format!("bracketing {} paths x {} steps", r.n_paths, r.n_steps),
            r.inside,
            format!(
                "PDE {} in [{}, {}]",
                fmt_param(r.pde),
                fmt_param(r.mc.ci95_low),
                fmt_param(r.mc.ci95_high)
            ),
        ));
    }
    out.table("bracketing.csv", &t)?;
    let mut text = format!("MC bracketing\n{}\n", t.to_text());

    // quanto ratio deviation table
    let cells = reference_deviation_table(&cfg.grid)?;
    let mut t = Table::new(["gamma", "rho", "tenor", "p", "p_hat", "q_hat", "deviation_pct", "reference_pct"]);
    for c in &cells {
        t.push(vec![
            fmt_param(c.gamma),
            fmt_param(c.rho),
            fmt_param(c.tenor),
            fmt_param(c.p),
            fmt_param(c.p_hat),
            fmt_param(c.q_hat),
            format!("{:.2}", c.deviation_pct),
            reference_deviation_pct(c.gamma, c.rho, c.tenor).map_or(String::new(), |v| format!("{v:.2}")),
        ]);
    }
    out.table("deviation_table.csv", &t)?;
    text.push_str(&format!("Quanto ratio deviation\n{}\n", t.to_text()));
    checks.extend(deviation_checks(&cells));

    // maturity study at both spread levels
    let tenors: Vec<f64> = (1..=10).map(f64::from).collect();
    let mut t = Table::new(["level", "y0", "gamma", "tenor", "q_hat", "one_plus_gamma"]);
    for (level, y0) in [("low", DEVIATION_Y_LOW), ("high", DEVIATION_Y_HIGH)] {
        let h = HazardParams { y0, ..deviation_hazard() };
        let cells = deviation_table(&h, 1.0, DEVIATION_SIGMA_Z, RatePair::flat(0.0), &MATURITY_GAMMAS, &[0.0], &tenors, &cfg.grid)?;
        for c in &cells {
            t.push(vec![
                level.into(),
                fmt_param(y0),
                fmt_param(c.gamma),
                fmt_param(c.tenor),
                fmt_param(c.q_hat),
                fmt_param(1.0 + c.gamma),
            ]);
        }
    }
    out.table("maturity_study.csv", &t)?;

    let mut ct = Table::new(["check", "passed", "detail"]);
    for c in &checks {
        ct.push(vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]);
        text.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    out.table("checks.csv", &ct)?;
    print(&text);
    let failed = checks.iter().filter(|c| !c.passed).count();
    Ok(if failed == 0 {
        Outcome::Ok
    } else {
        Outcome::Failed(format!("{failed} of {} checks failed", checks.len()))
    })
}

fn load_snapshots(path: &Path) -> Result<Vec<MarketSnapshot>> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_snapshots(std::io::BufReader::new(f)).with_context(|| format!("{}", path.display()))
}

fn result_tables(report: &BacktestReport) -> (Table, Table) {
    let mut res = Table::new([
        "date",
        "a",
        "b",
        "kappa",
        "y0",
        "sigma_y",
        "rho",
        "gamma",
        "residual_usd_5y_bp",
        "residual_usd_10y_bp",
        "residual_eur_5y_bp",
        "residual_eur_10y_bp",
        "iterations",
        "converged",
    ]);
    let mut diag = Table::new([
        "date",
        "spread_usd_1y_bp",
        "spread_usd_5y_bp",
        "spread_usd_10y_bp",
        "spread_eur_1y_bp",
        "spread_eur_5y_bp",
        "spread_eur_10y_bp",
        "relative_basis_1y",
        "relative_basis_5y",
        "relative_basis_10y",
        "gamma",
        "rho",
        "jpm_slope",
        "basis_slope",
    ]);
    for row in &report.rows {
        let r = &row.result;
        let date = r.date.format("%Y-%m-%d").to_string();
        let mut cells = vec![
            date.clone(),
            fmt_param(r.a),
            fmt_param(r.b),
            fmt_param(r.a * r.b),
            fmt_param(r.y0),
            fmt_param(r.sigma_y),
            fmt_param(r.rho),
            fmt_param(r.gamma),
        ];
        cells.extend(r.residuals_bp.iter().map(|v| format!("{v:.2}")));
        cells.push(r.iterations.to_string());
        cells.push(r.converged.to_string());
        res.push(cells);
        let mut d = vec![date];
        d.extend(row.spreads_usd.iter().chain(&row.spreads_eur).map(|&v| fmt_bp(v)));
        d.extend(row.relative_basis.iter().map(|&v| fmt_param(v)));
        d.extend([
            fmt_param(r.gamma),
            fmt_param(r.rho),
            fmt_param(row.jpm_slope),
            fmt_param(row.basis_slope),
        ]);
        diag.push(d);
    }
    (res, diag)
}

fn finish(report: &BacktestReport, mut text: String) -> Outcome {
    for f in &report.failures {
        text.push_str(&format!("FAILED {}: {}\n", f.date, f.message));
    }
    print(&text);
    if report.failures.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Failed(format!("{} of {} dates failed to calibrate", report.failures.len(), report.rows.len() + report.failures.len()))
    }
}

pub fn calibrate(cfg: &RunConfig, path: &Path) -> Result<Outcome> {
    let snaps = load_snapshots(path)?;
    let report = backtest(&snaps, &cfg.calibration)?;
    let (res, diag) = result_tables(&report);
    let out = Output::new(cfg)?;
    out.table("calibration.csv", &res)?;
    out.table("diagnostics.csv", &diag)?;
    let converged = report.rows.iter().filter(|r| r.result.converged).count();
    let text = format!(
        "{}\n{converged} of {} dates converged\n",
        res.to_text(),
        snaps.len()
    );
    Ok(finish(&report, text))
}

pub fn run_backtest(cfg: &RunConfig, path: Option<&Path>, synthetic: Option<usize>) -> Result<Outcome> {
    let out = Output::new(cfg)?;
    let (snaps, truth): (Vec<MarketSnapshot>, Option<Vec<TrueParams>>) = match (path, synthetic) {
        (Some(p), _) => (load_snapshots(p)?, None),
        (None, Some(n)) => {
            let start = NaiveDate::from_ymd_opt(2012, 1, 2).unwrap();
            let v = synthetic_snapshots(n, start, 0.01, &cfg.calibration)?;
            let (s, t): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            out.snapshots("snapshots.csv", &s)?;
            (s, Some(t))
        }
        (None, None) => unreachable!("checked by the caller"),
    };
    let report = backtest(&snaps, &cfg.calibration)?;
    let (res, diag) = result_tables(&report);
    out.table("calibration.csv", &res)?;
    out.table("diagnostics.csv", &diag)?;
    let mut reg = Table::new(["basis_tenor", "slope", "intercept", "n"]);
    for (tenor, fit) in [("1y", report.gamma_on_basis_1y), ("5y", report.gamma_on_basis_5y)] {
        if let Some(f) = fit {
            reg.push(vec![tenor.into(), fmt_param(f.slope), fmt_param(f.intercept), f.n.to_string()]);
        }
    }
    out.table("regression.csv", &reg)?;
    let mut text = format!("{}\ngamma on relative basis\n{}", diag.to_text(), reg.to_text());
    if let Some(truth) = truth {
        let mut t = Table::new(["date", "b", "y0", "sigma_y", "rho", "gamma", "rho_error", "gamma_error"]);
        for (s, tp) in snaps.iter().zip(&truth) {
            let fitted = report.rows.iter().find(|r| r.result.date == s.date);
            let err = |f: fn(&qcds_core::calibration::CalibrationResult) -> f64, v: f64| {
                fitted.map_or(String::new(), |r| fmt_param(f(&r.result) - v))
            };
            t.push(vec![
                s.date.format("%Y-%m-%d").to_string(),
                fmt_param(tp.hazard.b),
                fmt_param(tp.hazard.y0),
                fmt_param(tp.hazard.sigma_y),
                fmt_param(tp.rho),
                fmt_param(tp.gamma),
                err(|r| r.rho, tp.rho),
                err(|r| r.gamma, tp.gamma),
            ]);
        }
        out.table("truth.csv", &t)?;
        text.push_str(&format!("\nrecovery errors\n{}", t.to_text()));
    }
    Ok(finish(&report, text))
}

pub fn run_sweep(cfg: &RunConfig, axes: &[SweepAxis]) -> Result<Outcome> {
    let s = cfg.scenario.expect("sweep needs a scenario");
    let pts = sweep(&s, axes, &cfg.grid)?;
    let mut headers: Vec<String> = axes.iter().map(|a| a.param.name().to_string()).collect();
    headers.extend(["spread_liquid_bp", "spread_contractual_bp", "basis_bp"].map(String::from));
    let mut t = Table::new(headers);
    for p in &pts {
        let mut row: Vec<String> = p.values.iter().map(|&v| fmt_param(v)).collect();
        row.extend([
            fmt_bp(p.spreads.liquid.par_spread),
            fmt_bp(p.spreads.contractual.par_spread),
            fmt_bp(p.spreads.basis()),
        ]);
        t.push(row);
    }
    Output::new(cfg)?.table("sweep.csv", &t)?;
    print(&t.to_text());
    Ok(Outcome::Ok)
}
