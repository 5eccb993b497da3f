//! Model primitives: parameter sets, no-arbitrage drifts, the change of
//! hazard between the two currency measures and the short-tenor spread
//! relations used to read devaluation off quoted basis spreads.
//!
//! Conventions: the liquid currency defines the pricing measure. `Z` is the
//! value of one unit of contractual currency expressed in liquid currency,
//! `X = 1/Z` its reciprocal. The hazard rate is `λ = exp(Y)` with `Y` an
//! Ornstein-Uhlenbeck process. All rates and spreads are annualized
//! decimals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ornstein-Uhlenbeck parameters of the log-intensity `Y`:
/// `dY = a (b - Y) dt + sigma_y dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    /// Mean-reversion speed (1/year).
    pub a: f64,
    /// Long-term level of the log-intensity.
    pub b: f64,
    /// Volatility of the log-intensity (1/sqrt(year)).
    pub sigma_y: f64,
    /// Initial log-intensity.
    pub y0: f64,
}

impl HazardParams {
    pub fn new(a: f64, b: f64, sigma_y: f64, y0: f64) -> Result<Self> {
        let h = Self { a, b, sigma_y, y0 };
        h.validate()?;
        Ok(h)
    }

    /// Constant intensity `lambda`: zero volatility, no mean reversion.
    pub fn constant(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::param("lambda", lambda, "must be positive and finite"));
        }
        Self::new(0.0, 0.0, 0.0, lambda.ln())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("sigma_y", self.sigma_y),
            ("y0", self.y0),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, v, "must be finite"));
            }
        }
        if self.a < 0.0 {
            return Err(Error::param("a", self.a, "must be non-negative"));
        }
        if self.sigma_y < 0.0 {
            return Err(Error::param("sigma_y", self.sigma_y, "must be non-negative"));
        }
        Ok(())
    }

    /// Conditional mean of `Y_{t+dt}` given `Y_t = y`.
    pub fn ou_mean(&self, y: f64, dt: f64) -> f64 {
        let decay = (-self.a * dt).exp();
        y * decay + self.b * (1.0 - decay)
    }

    /// Conditional variance of `Y_{t+dt}`; tends to `sigma_y^2 dt` as `a -> 0`.
    pub fn ou_variance(&self, dt: f64) -> f64 {
        let s2 = self.sigma_y * self.sigma_y;
        let x = self.a * dt;
        if x < 1e-8 {
            s2 * dt * (1.0 - x)
        } else {
            s2 * (-(-2.0 * x).exp_m1()) / (2.0 * self.a)
        }
    }

    /// `(1 - e^{-a dt}) / a`, with the `a -> 0` limit `dt`.
    pub(crate) fn ou_decay_integral(&self, dt: f64) -> f64 {
        let x = self.a * dt;
        if x < 1e-8 {
            dt * (1.0 - 0.5 * x)
        } else {
            -(-x).exp_m1() / self.a
        }
    }
}

/// FX state and credit/FX link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantoFxParams {
    /// Initial FX rate, liquid-currency units per contractual-currency unit.
    pub z0: f64,
    /// Lognormal FX volatility (1/sqrt(year)).
    pub sigma_z: f64,
    /// Proportional FX jump at default; `-1` wipes the contractual currency out.
    pub gamma_z: f64,
    /// Instantaneous correlation between the hazard and FX Brownian motions.
    pub rho: f64,
}

impl QuantoFxParams {
    pub fn new(z0: f64, sigma_z: f64, gamma_z: f64, rho: f64) -> Result<Self> {
        let fx = Self {
            z0,
            sigma_z,
            gamma_z,
            rho,
        };
        fx.validate()?;
        Ok(fx)
    }

    /// No FX risk and no link to default.
    pub fn flat(z0: f64) -> Self {
        Self {
            z0,
            sigma_z: 0.0,
            gamma_z: 0.0,
            rho: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z0 > 0.0) || !self.z0.is_finite() {
            return Err(Error::param("z0", self.z0, "must be positive and finite"));
        }
        if !(self.sigma_z >= 0.0) || !self.sigma_z.is_finite() {
            return Err(Error::param("sigma_z", self.sigma_z, "must be non-negative"));
        }
        if !(self.gamma_z >= -1.0) || !self.gamma_z.is_finite() {
            return Err(Error::param("gamma_z", self.gamma_z, "must be >= -1"));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::param("rho", self.rho, "must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// Flat deterministic short rates of the two currencies.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RatePair {
    /// Liquid-currency (domestic) short rate.
    pub r: f64,
    /// Contractual-currency (foreign) short rate.
    pub r_hat: f64,
}

impl RatePair {
    pub fn new(r: f64, r_hat: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::param("r", r, "must be finite"));
        }
        if !r_hat.is_finite() {
            return Err(Error::param("r_hat", r_hat, "must be finite"));
        }
        Ok(Self { r, r_hat })
    }

    pub fn flat(r: f64) -> Self {
        Self { r, r_hat: r }
    }

    /// Liquid-currency discount factor `B(0, t)`.
    pub fn discount(&self, t: f64) -> f64 {
        (-self.r * t).exp()
    }

    /// Contractual-currency discount factor `B̂(0, t)`.
    pub fn discount_hat(&self, t: f64) -> f64 {
        (-self.r_hat * t).exp()
    }
}

/// Default indicator with the default time when it has happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefaultState {
    Alive,
    Defaulted { tau: f64 },
}

impl DefaultState {
    /// `1.0` once defaulted, `0.0` otherwise.
    pub fn indicator(&self) -> f64 {
        match self {
            DefaultState::Alive => 0.0,
            DefaultState::Defaulted { .. } => 1.0,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            DefaultState::Alive => None,
            DefaultState::Defaulted { tau } => Some(tau),
        }
    }

    pub fn survived_to(&self, t: f64) -> bool {
        match *self {
            DefaultState::Alive => true,
            DefaultState::Defaulted { tau } => tau > t,
        }
    }
}

pub fn intensity(y: f64) -> f64 {
    y.exp()
}

/// Intensity of default under the contractual-currency measure, `(1 + γ) λ`.
pub fn foreign_hazard(lambda: f64, gamma_z: f64) -> Result<f64> {
    if !(gamma_z >= -1.0) {
        return Err(Error::param("gamma_z", gamma_z, "devaluation below -100%"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda", lambda, "must be non-negative"));
    }
    Ok((1.0 + gamma_z) * lambda)
}

/// Jump size of `X = 1/Z` implied by a jump `gamma_z` of `Z`. The map is an
/// involution on `(-1, ∞)`.
pub fn fx_jump_inverse(gamma_z: f64) -> Result<f64> {
    if gamma_z == -1.0 {
        return Err(Error::Singular(
            "gamma_z = -1 sends the reciprocal FX rate to infinity",
        ));
    }
    if !(gamma_z > -1.0) || !gamma_z.is_finite() {
        return Err(Error::param("gamma_z", gamma_z, "must lie in (-1, inf)"));
    }
    Ok(-gamma_z / (1.0 + gamma_z))
}

/// Drift of `Z` under the liquid-currency measure that keeps
/// `Z B̂ / (z0 B)` a martingale.
pub fn no_arb_drift_z(rates: RatePair, gamma_z: f64, lambda: f64, d: f64) -> f64 {
    rates.r - rates.r_hat - gamma_z * lambda * (1.0 - d)
}

/// Drift of `X` under the contractual-currency measure, `lambda_hat` being
/// the intensity under that measure.
pub fn no_arb_drift_x(rates: RatePair, gamma_x: f64, lambda_hat: f64, d: f64) -> f64 {
    rates.r_hat - rates.r - gamma_x * lambda_hat * (1.0 - d)
}

/// Direction of the flat-hazard spread approximation `S ≈ λ (1 - R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    SpreadToHazard,
    HazardToSpread,
}

pub fn spread_hazard_triangle(value: f64, recovery: f64, direction: Triangle) -> Result<f64> {
    if recovery == 1.0 {
        return Err(Error::Singular("recovery = 1 leaves no loss to price"));
    }
    if !(0.0..1.0).contains(&recovery) {
        return Err(Error::param("recovery", recovery, "must lie in [0, 1)"));
    }
    let lgd = 1.0 - recovery;
    Ok(match direction {
        Triangle::SpreadToHazard => value / lgd,
        Triangle::HazardToSpread => value * lgd,
    })
}

/// Relative basis `(S_contractual - S_liquid) / S_liquid`, the short-tenor
/// estimate of the devaluation rate.
pub fn devaluation_estimate(s_contractual: f64, s_liquid: f64) -> Result<f64> {
    if !(s_liquid > 0.0) {
        return Err(Error::param("s_liquid", s_liquid, "must be positive"));
    }
    Ok((s_contractual - s_liquid) / s_liquid)
}

/// Cost-of-hedging slope of the relative basis between two tenors:
/// `σ_Y σ_Z ρ (rpv(T2) - rpv(T1))`.
pub fn jpm_basis_slope(sigma_y: f64, sigma_z: f64, rho: f64, rpv_t1: f64, rpv_t2: f64) -> f64 {
    sigma_y * sigma_z * rho * (rpv_t2 - rpv_t1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn intensity_values() {
        assert_eq!(intensity(0.0), 1.0);
        assert_abs_diff_eq!(intensity(-4.089), 0.016756, epsilon = 5e-7);
        assert_abs_diff_eq!(intensity(-2.089), 0.123811, epsilon = 5e-7);
    }

    #[test]
    fn foreign_hazard_cases() {
        assert_eq!(foreign_hazard(0.02, 0.0).unwrap(), 0.02);
        assert_eq!(foreign_hazard(0.02, -1.0).unwrap(), 0.0);
        let gamma = 350.0 / 440.0 - 1.0;
        assert_abs_diff_eq!(foreign_hazard(0.0110, gamma).unwrap(), 0.00875, epsilon = 1e-6);
        assert!(foreign_hazard(0.02, -1.01).is_err());
    }

    #[test]
    fn fx_jump_inverse_cases() {
        assert_eq!(fx_jump_inverse(0.0).unwrap(), 0.0);
        assert_eq!(fx_jump_inverse(1.0).unwrap(), -0.5);
        assert_eq!(fx_jump_inverse(-0.5).unwrap(), 1.0);
        assert!(matches!(fx_jump_inverse(-1.0), Err(Error::Singular(_))));
        assert!(fx_jump_inverse(-1.5).is_err());
    }

    #[test]
    fn drifts() {
        let zero = RatePair::default();
        assert_eq!(no_arb_drift_z(zero, 0.0, 0.02, 0.0), 0.0);
        let rates = RatePair::new(0.01, 0.02).unwrap();
        assert_abs_diff_eq!(no_arb_drift_z(rates, -0.2, 0.05, 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(no_arb_drift_z(rates, -0.2, 0.05, 1.0), -0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(no_arb_drift_x(rates, 0.0, 0.3, 0.0), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(no_arb_drift_x(zero, 0.25, 0.04, 0.0), -0.01, epsilon = 1e-15);
    }

    #[test]
    fn triangle() {
        let l = spread_hazard_triangle(0.01, 0.4, Triangle::SpreadToHazard).unwrap();
        assert_abs_diff_eq!(l, 0.016667, epsilon = 5e-7);
        let s = spread_hazard_triangle(0.016746, 0.4, Triangle::HazardToSpread).unwrap();
        assert_abs_diff_eq!(s, 0.0100476, epsilon = 1e-7);
        assert_eq!(spread_hazard_triangle(0.0, 0.7, Triangle::SpreadToHazard).unwrap(), 0.0);
        assert!(matches!(
            spread_hazard_triangle(0.01, 1.0, Triangle::SpreadToHazard),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn devaluation() {
        assert_abs_diff_eq!(devaluation_estimate(0.0350, 0.0440).unwrap(), -0.20455, epsilon = 1e-5);
        assert_eq!(devaluation_estimate(0.03, 0.03).unwrap(), 0.0);
        assert_abs_diff_eq!(devaluation_estimate(0.0060, 0.0040).unwrap(), 0.5, epsilon = 1e-12);
        assert!(devaluation_estimate(0.01, 0.0).is_err());
    }

    #[test]
    fn jpm_slope() {
        assert_eq!(jpm_basis_slope(0.5, 0.1, 0.0, 0.98, 7.5), 0.0);
        assert_abs_diff_eq!(jpm_basis_slope(0.5, 0.1, 0.4, 0.98, 7.5), 0.1304, epsilon = 1e-12);
        assert_abs_diff_eq!(jpm_basis_slope(0.5, 0.1, -0.4, 0.98, 7.5), -0.1304, epsilon = 1e-12);
    }

    #[test]
    fn param_validation() {
        assert!(HazardParams::new(-0.1, 0.0, 0.2, -4.0).is_err());
        assert!(HazardParams::new(0.1, 0.0, -0.2, -4.0).is_err());
        assert!(HazardParams::new(0.1, f64::NAN, 0.2, -4.0).is_err());
        assert!(QuantoFxParams::new(0.0, 0.1, 0.0, 0.0).is_err());
        assert!(QuantoFxParams::new(1.0, 0.1, -1.2, 0.0).is_err());
        assert!(QuantoFxParams::new(1.0, 0.1, -1.0, 0.0).is_ok());
        assert!(QuantoFxParams::new(1.0, 0.1, 0.0, 1.01).is_err());
    }

    #[test]
    fn ou_variance_limit() {
        let h = HazardParams::new(0.0, 0.0, 0.3, 0.0).unwrap();
        assert_abs_diff_eq!(h.ou_variance(1.0), 0.09, epsilon = 1e-15);
        let h = HazardParams::new(1e-9, 0.0, 0.3, 0.0).unwrap();
        assert_abs_diff_eq!(h.ou_variance(1.0), 0.09, epsilon = 1e-9);
        let h = HazardParams::new(2.0, 0.0, 0.3, 0.0).unwrap();
        assert_abs_diff_eq!(h.ou_variance(0.5), 0.09 * (1.0 - (-2.0f64).exp()) / 4.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn fx_jump_inverse_is_involution(g in -0.999f64..50.0) {
            let back = fx_jump_inverse(fx_jump_inverse(g).unwrap()).unwrap();
            prop_assert!((back - g).abs() <= 1e-12 * (1.0 + g.abs()));
        }

        #[test]
        fn foreign_hazard_linear_monotone(l1 in 0.0f64..1.0, l2 in 0.0f64..1.0, g in -1.0f64..5.0) {
            let f1 = foreign_hazard(l1, g).unwrap();
            let f2 = foreign_hazard(l2, g).unwrap();
            prop_assert!((foreign_hazard(l1 + l2, g).unwrap() - (f1 + f2)).abs() < 1e-12);
            if l1 <= l2 { prop_assert!(f1 <= f2); }
            prop_assert_eq!(foreign_hazard(l1, 0.0).unwrap(), l1);
        }

        #[test]
        fn zero_jump_drifts_reduce(r in -0.05f64..0.1, rh in -0.05f64..0.1, l in 0.0f64..1.0) {
            let rates = RatePair::new(r, rh).unwrap();
            prop_assert_eq!(no_arb_drift_z(rates, 0.0, l, 0.0), r - rh);
            prop_assert_eq!(no_arb_drift_x(rates, 0.0, l, 0.0), rh - r);
        }
    }
}
