use proptest::prelude::*;
use qcds_core::mc::{
    quanto_bond_mc, simulate_default, simulate_ou_terminal, survival_curve_mc, survival_probability_mc,
    verify_fx_symmetry, verify_rn_martingale, DriftSpec, McEstimate, SimConfig,
};
use qcds_core::model::{DefaultState, HazardParams, QuantoFxParams, RatePair};
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided Kolmogorov-Smirnov statistic of `xs` against `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_ou_step_passes_ks(
        a in 0.0f64..3.0,
        b in -6.0f64..2.0,
        sigma in 0.05f64..1.5,
        y0 in -6.0f64..0.0,
        dt in 0.01f64..5.0,
        seed in 0u64..1000,
    ) {
        let h = HazardParams::new(a, b, sigma, y0).unwrap();
        let n = 4000;
        let draws = simulate_ou_terminal(&h, dt, n, seed).unwrap();
        let law = Normal::new(h.ou_mean(y0, dt), h.ou_variance(dt).sqrt()).unwrap();
        let d = ks_statistic(draws, |x| law.cdf(x));
        // 1% critical value of the one-sample test
        prop_assert!(d < 1.628 / (n as f64).sqrt(), "D = {d}");
    }
}

#[test]
fn ou_terminal_moments() {
    let h = HazardParams::new(0.08, 3.7, 0.2, -5.0).unwrap();
    let draws = simulate_ou_terminal(&h, 5.0, 100_000, 3).unwrap();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = -5.0 * (-0.4f64).exp() + 3.7 * (1.0 - (-0.4f64).exp());
    assert!((mean - expected).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {expected}");
}

#[test]
fn estimates_are_bit_identical_across_runs_and_thread_counts() {
    let h = HazardParams::new(0.5, -3.0, 0.6, -3.5).unwrap();
    let fx = QuantoFxParams::new(1.1, 0.15, -0.3, 0.4).unwrap();
    let rates = RatePair::new(0.02, 0.01).unwrap();
    let cfg = SimConfig::new(5000, 40, 2.0, 11).unwrap();
    let run = || {
        (
            survival_curve_mc(&h, &[1.0, 2.0], &cfg).unwrap(),
            quanto_bond_mc(&h, &fx, rates, 2.0, &cfg).unwrap(),
            verify_rn_martingale(&h, &fx, rates, 2.0, &cfg, DriftSpec::Compensated).unwrap(),
        )
    };
    let reference = run();
    assert_eq!(reference, run());
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        assert_eq!(reference, pool.install(run));
    }
    let other = SimConfig { seed: 12, ..cfg };
    assert_ne!(survival_probability_mc(&h, 2.0, &other).unwrap(), reference.0[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn survival_curves_are_bounded_and_non_increasing(
        a in 0.0f64..1.0,
        b in -6.0f64..-1.0,
        sigma in 0.0f64..1.0,
        y0 in -6.0f64..-1.5,
        seed in 0u64..100,
    ) {
        let h = HazardParams::new(a, b, sigma, y0).unwrap();
        let tenors = [0.5, 1.0, 2.0, 3.0, 4.0];
        let cfg = SimConfig::new(2000, 40, 4.0, seed).unwrap();
        let curve = survival_curve_mc(&h, &tenors, &cfg).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].mean <= w[0].mean + 2.0 * w[0].std_error.max(w[1].std_error));
        }
        for e in &curve {
            prop_assert!((0.0..=1.0).contains(&e.mean));
        }
    }
}

#[test]
fn horizon_start_survives_surely() {
    let h = HazardParams::new(0.1, -3.0, 0.5, -3.0).unwrap();
    let cfg = SimConfig::new(1000, 10, 1.0, 1).unwrap();
    let e = survival_probability_mc(&h, 0.0, &cfg).unwrap();
    assert_eq!(e.mean, 1.0);
    assert_eq!(e.std_error, 0.0);
}

#[test]
fn zero_threshold_defaults_immediately() {
    let grid = [0.0, 0.5, 1.0];
    assert_eq!(simulate_default(&[0.1, 0.1, 0.1], &grid, 0.0), DefaultState::Defaulted { tau: 0.0 });
    assert_eq!(simulate_default(&[0.0, 0.0, 0.0], &grid, 1e-9), DefaultState::Alive);
    match simulate_default(&[1.0, 1.0, 1.0], &grid, 0.25) {
        DefaultState::Defaulted { tau } => assert!((tau - 0.25).abs() < 1e-12),
        s => panic!("{s:?}"),
    }
}

#[test]
fn constant_intensity_survival() {
    let h = HazardParams::new(0.0, 0.0, 0.0, -4.089).unwrap();
    let cfg = SimConfig::new(1000, 50, 5.0, 2).unwrap();
    let e = survival_probability_mc(&h, 5.0, &cfg).unwrap();
    let exact = (-(-4.089f64).exp() * 5.0).exp();
    assert!((e.mean - exact).abs() < 1e-12);
}

#[test]
fn antithetic_keeps_the_mean_and_reduces_variance() {
    let h = HazardParams::new(0.3, -3.0, 0.8, -3.2).unwrap();
    let fx = QuantoFxParams::new(1.0, 0.2, -0.4, 0.5).unwrap();
    let rates = RatePair::flat(0.0);
    let plain = SimConfig::new(40_000, 50, 3.0, 5).unwrap();
    let anti = plain.with_antithetic(true);
    let p = survival_probability_mc(&h, 3.0, &plain).unwrap();
    let pa = survival_probability_mc(&h, 3.0, &anti).unwrap();
    assert!(p.agrees_with(&pa, 3.0), "{p:?} vs {pa:?}");
    assert!(pa.std_error <= p.std_error, "{} > {}", pa.std_error, p.std_error);
    let q = quanto_bond_mc(&h, &fx, rates, 3.0, &plain).unwrap();
    let qa = quanto_bond_mc(&h, &fx, rates, 3.0, &anti).unwrap();
    assert!(q.p_hat.agrees_with(&qa.p_hat, 3.0), "{q:?} vs {qa:?}");
}

#[test]
fn martingale_holds_over_the_validation_sweep() {
    let h = HazardParams::new(1e-4, -210.45, 0.2, -3.0).unwrap();
    let rates = RatePair::new(0.01, 0.03).unwrap();
    let cfg = SimConfig::new(20_000, 50, 5.0, 9).unwrap();
    for gamma in [-0.99, -0.5, -0.25, 0.0, 0.25, 0.5] {
        for rho in [-0.9, 0.0, 0.9] {
            for sigma_z in [0.05, 0.2] {
                let fx = QuantoFxParams::new(1.0, sigma_z, gamma, rho).unwrap();
                let m = verify_rn_martingale(&h, &fx, rates, 5.0, &cfg, DriftSpec::Compensated).unwrap();
                assert!(m.z_score(1.0).abs() <= 3.5, "gamma {gamma} rho {rho} sigma_z {sigma_z}: {m:?}");
            }
        }
    }
}

#[test]
fn martingale_is_exact_without_fx_risk() {
    let h = HazardParams::new(0.2, -4.0, 0.5, -3.0).unwrap();
    let fx = QuantoFxParams::new(1.3, 0.0, 0.0, 0.0).unwrap();
    let cfg = SimConfig::new(500, 20, 2.0, 1).unwrap();
    let m = verify_rn_martingale(&h, &fx, RatePair::new(0.02, 0.05).unwrap(), 2.0, &cfg, DriftSpec::Compensated).unwrap();
    assert!((m.mean - 1.0).abs() < 1e-12 && m.std_error < 1e-12, "{m:?}");
}

#[test]
fn uncompensated_drift_is_detected() {
    let h = HazardParams::constant(0.05).unwrap();
    let fx = QuantoFxParams::new(1.0, 0.1, -0.5, 0.0).unwrap();
    let cfg = SimConfig::new(50_000, 50, 5.0, 4).unwrap();
    let rates = RatePair::flat(0.0);
    let good = verify_rn_martingale(&h, &fx, rates, 5.0, &cfg, DriftSpec::Compensated).unwrap();
    let bad = verify_rn_martingale(&h, &fx, rates, 5.0, &cfg, DriftSpec::Uncompensated).unwrap();
    assert!(good.z_score(1.0).abs() <= 3.0, "{good:?}");
    assert!(bad.z_score(1.0).abs() > 5.0, "{bad:?}");
    // without the compensator E[L] = E[(1+γ)^{D_T}] = 1 + γ (1 - e^{-λT})
    let biased = 1.0 - 0.5 * (1.0 - (-0.25f64).exp());
    assert!(bad.z_score(biased).abs() <= 3.0, "{bad:?} vs {biased}");
}

fn check_symmetry(gamma: f64, rho: f64) {
    let h = HazardParams::new(0.5, -3.5, 0.5, -3.5).unwrap();
    let fx = QuantoFxParams::new(0.9, 0.12, gamma, rho).unwrap();
    let rates = RatePair::new(0.01, 0.02).unwrap();
    let cfg = SimConfig::new(40_000, 60, 3.0, 21).unwrap();
    let r = verify_fx_symmetry(&h, &fx, rates, 3.0, &cfg).unwrap();
    assert!(r.max_pathwise_error < 1e-12, "{r:?}");
    assert!(r.agrees(3.0), "{r:?}");
    assert!((r.gamma_x - (-gamma / (1.0 + gamma))).abs() < 1e-15);
}

#[test]
fn fx_symmetry_for_devaluation_sizes() {
    for gamma in [-0.5, -0.2045, 0.0, 1.0] {
        check_symmetry(gamma, 0.3);
    }
    check_symmetry(-0.3, -0.8);
}

#[test]
fn one_jump_identity_for_constant_hazard() {
    let lambda = 0.016746;
    let gamma = -0.2045;
    let h = HazardParams::constant(lambda).unwrap();
    let fx = QuantoFxParams::new(1.0, 0.1, gamma, 0.0).unwrap();
    let cfg = SimConfig::new(200_000, 50, 1.0, 8).unwrap();
    let q = quanto_bond_mc(&h, &fx, RatePair::flat(0.0), 1.0, &cfg).unwrap();
    let expected = (-gamma * lambda).exp() * (-lambda).exp();
    assert!(q.p_hat.z_score(expected).abs() <= 3.0, "{:?} vs {expected}", q.p_hat);
}

#[test]
fn no_quanto_effect_without_fx_risk() {
    let h = HazardParams::new(0.3, -3.0, 0.4, -3.5).unwrap();
    let fx = QuantoFxParams::new(1.0, 0.0, 0.0, 0.0).unwrap();
    let cfg = SimConfig::new(20_000, 40, 2.0, 3).unwrap();
    let q = quanto_bond_mc(&h, &fx, RatePair::flat(0.01), 2.0, &cfg).unwrap();
    let p = survival_probability_mc(&h, 2.0, &cfg).unwrap();
    assert!(q.p_hat.agrees_with(&p, 3.0), "{q:?} vs {p:?}");
}

#[test]
fn paths_scale_with_initial_fx() {
    let h = HazardParams::new(0.3, -3.0, 0.4, -3.5).unwrap();
    let rates = RatePair::new(0.01, 0.02).unwrap();
    let cfg = SimConfig::new(5000, 40, 2.0, 6).unwrap();
    let one = quanto_bond_mc(&h, &QuantoFxParams::new(0.8, 0.1, -0.3, 0.5).unwrap(), rates, 2.0, &cfg).unwrap();
    let two = quanto_bond_mc(&h, &QuantoFxParams::new(1.6, 0.1, -0.3, 0.5).unwrap(), rates, 2.0, &cfg).unwrap();
    assert!((two.u0.mean / one.u0.mean - 2.0).abs() < 1e-12);
    assert!((two.p_hat.mean - one.p_hat.mean).abs() < 1e-12);
}

#[test]
fn confidence_interval_is_symmetric() {
    let e = McEstimate::new(0.5, 0.01, 100);
    assert!((e.ci95_high - e.mean - (e.mean - e.ci95_low)).abs() < 1e-15);
    assert!((e.ci95_high - 0.5196).abs() < 1e-12);
}
