//! Browser bindings. Every entry point takes and returns JSON so the page
//! needs no generated types; the plain functions are usable natively too.

use qcds_core::cds::{par_spreads_from_curves, pricing_tenors};
use qcds_core::mc::{self, SimConfig};
use qcds_core::model::{HazardParams, QuantoFxParams, RatePair};
use qcds_core::pde::{quanto_survival_surface, SolverConfig};
use qcds_core::scenario::{sweep, Param, Preset, Scenario, SweepAxis};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const MAX_SWEEP_STEPS: usize = 41;
const MAX_PATHS: usize = 200;

/// Model inputs as sent by the page. Missing fields take the default
/// scenario's values.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub a: f64,
    pub b: f64,
    pub sigma_y: f64,
    pub y0: f64,
    pub z0: f64,
    pub sigma_z: f64,
    pub gamma: f64,
    pub rho: f64,
    pub r: f64,
    pub r_hat: f64,
    pub tenor: f64,
    pub recovery: f64,
    pub grid_x: usize,
    pub grid_y: usize,
    pub steps_per_year: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        let s = Scenario::preset(Preset::GammaRho);
        Self {
            a: s.hazard.a,
            b: s.hazard.b,
            sigma_y: s.hazard.sigma_y,
            y0: s.hazard.y0,
            z0: s.fx.z0,
            sigma_z: s.fx.sigma_z,
            gamma: s.fx.gamma_z,
            rho: s.fx.rho,
            r: s.rates.r,
            r_hat: s.rates.r_hat,
            tenor: s.tenor,
            recovery: s.recovery,
            grid_x: 21,
            grid_y: 81,
            steps_per_year: 40,
        }
    }
}

impl DemoParams {
    fn parse(json: &str) -> Result<Self, String> {
        if json.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(json).map_err(|e| format!("bad parameters: {e}"))
    }

    fn scenario(&self) -> Result<Scenario, String> {
        let s = Scenario {
            hazard: HazardParams {
                a: self.a,
                b: self.b,
                sigma_y: self.sigma_y,
                y0: self.y0,
            },
            fx: QuantoFxParams {
                z0: self.z0,
                sigma_z: self.sigma_z,
                gamma_z: self.gamma,
                rho: self.rho,
            },
            rates: RatePair {
                r: self.r,
                r_hat: self.r_hat,
            },
            tenor: self.tenor,
            recovery: self.recovery,
        };
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }

    fn solver(&self) -> Result<SolverConfig, String> {
        let cfg = SolverConfig::with_resolution(self.grid_x, self.grid_y, self.steps_per_year);
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct CurvesOut {
    tenors: Vec<f64>,
    p: Vec<f64>,
    p_hat: Vec<f64>,
    liquid_bp: f64,
    contractual_bp: f64,
    basis_bp: f64,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Survival curves in both currencies on the contract's payment dates and
/// the two par spreads.
pub fn survival_curves(params: &str) -> Result<String, String> {
    let p = DemoParams::parse(params)?;
    let s = p.scenario()?;
    let contract = s.contract().map_err(|e| e.to_string())?;
    let tenors = pricing_tenors(std::slice::from_ref(&contract));
    let surface = quanto_survival_surface(&s.hazard, &s.fx, s.rates, &tenors, &p.solver()?).map_err(|e| e.to_string())?;
    let curves = surface.curves_at(surface.spot_index).map_err(|e| e.to_string())?;
    let q = par_spreads_from_curves(&curves, s.rates, &contract).map_err(|e| e.to_string())?;
    to_json(&CurvesOut {
        tenors,
        p: curves.p.probs().to_vec(),
        p_hat: curves.p_hat.probs().to_vec(),
        liquid_bp: q.liquid.par_spread * 1e4,
        contractual_bp: q.contractual.par_spread * 1e4,
        basis_bp: q.basis() * 1e4,
    })
}

#[derive(Debug, Serialize)]
struct SweepOut {
    param: String,
    values: Vec<f64>,
    liquid_bp: Vec<f64>,
    contractual_bp: Vec<f64>,
}

/// Par spreads along one parameter axis.
pub fn spread_sweep(params: &str, param: &str, from: f64, to: f64, steps: usize) -> Result<String, String> {
    let p = DemoParams::parse(params)?;
    let s = p.scenario()?;
    if steps == 0 || steps > MAX_SWEEP_STEPS {
        return Err(format!("steps must lie in 1..={MAX_SWEEP_STEPS}"));
    }
    let param: Param = param.parse().map_err(|e: qcds_core::Error| e.to_string())?;
    let axis = SweepAxis { param, from, to, steps };
    let pts = sweep(&s, &[axis], &p.solver()?).map_err(|e| e.to_string())?;
    to_json(&SweepOut {
        param: param.name().to_string(),
        values: pts.iter().map(|q| q.values[0]).collect(),
        liquid_bp: pts.iter().map(|q| q.spreads.liquid.par_spread * 1e4).collect(),
        contractual_bp: pts.iter().map(|q| q.spreads.contractual.par_spread * 1e4).collect(),
    })
}

#[derive(Debug, Serialize)]
struct PathOut {
    lambda: Vec<f64>,
    fx: Vec<f64>,
    tau: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PathsOut {
    grid: Vec<f64>,
    paths: Vec<PathOut>,
}

/// A handful of simulated intensity and FX paths up to the contract tenor.
pub fn sample_paths(params: &str, n_paths: usize, n_steps: usize, seed: u64) -> Result<String, String> {
    let p = DemoParams::parse(params)?;
    let s = p.scenario()?;
    if n_paths > MAX_PATHS {
        return Err(format!("at most {MAX_PATHS} paths"));
    }
    let cfg = SimConfig::new(n_paths, n_steps, s.tenor, seed).map_err(|e| e.to_string())?;
    let (grid, paths) = mc::sample_paths(&s.hazard, &s.fx, s.rates, &cfg).map_err(|e| e.to_string())?;
    to_json(&PathsOut {
        grid,
        paths: paths
            .into_iter()
            .map(|q| PathOut {
                lambda: q.lambda,
                fx: q.fx,
                tau: q.tau,
            })
            .collect(),
    })
}

#[wasm_bindgen(js_name = survivalCurves)]
pub fn survival_curves_js(params: &str) -> Result<String, JsValue> {
    survival_curves(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = spreadSweep)]
pub fn spread_sweep_js(params: &str, param: &str, from: f64, to: f64, steps: usize) -> Result<String, JsValue> {
    spread_sweep(params, param, from, to, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = samplePaths)]
pub fn sample_paths_js(params: &str, n_paths: usize, n_steps: usize, seed: u32) -> Result<String, JsValue> {
    sample_paths(params, n_paths, n_steps, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
}
