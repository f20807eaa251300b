use std::sync::Arc;

use nalgebra::DMatrix;

use super::*;
use crate::constraints::ConstraintSet;
use crate::generators::{make_custom_generator, make_exponential_generator, make_log_generator, CustomDriver};
use crate::quadrature::gaussian_expectation;
use crate::terminal::TerminalSpec;

fn unit_model(t: f64) -> MarketModel {
    MarketModel::black_scholes(0.05, 0.05, 1.0, t).unwrap()
}

fn constant_driver(kappa: f64) -> GeneratorSpec {
    GeneratorSpec::new("const", 1.0, Arc::new(move |_, _, _, _| kappa)).y_independent(true)
}

fn quadratic_driver(q: f64) -> GeneratorSpec {
    GeneratorSpec::new("quad", q, Arc::new(move |_, _, _, z: &[f64]| 0.5 * q * z[0] * z[0]))
        .y_independent(true)
        .with_h1(H1Certificate::constant(0.0, 0.0, q, q, 1.0).with_variant(crate::generators::H1Variant::H1Prime, 0.0))
}

fn tanh_terminal(amp: f64, k: f64) -> Terminal {
    Terminal::from_spec(&TerminalSpec::Tanh { weights: vec![k], amplitude: amp, offset: 0.0 }, 1).unwrap()
}

#[test]
fn zero_driver_keeps_constant_terminal() {
    let p = BSDEProblem::eq1(unit_model(1.0), constant_driver(0.0), Terminal::constant(0.7), 50);
    let sol = solve(&p).unwrap();
    for (_, y) in sol.y_values() {
        assert_eq!(y, 0.7);
    }
    assert_eq!(sol.z0[0], 0.0);
    assert!(sol.energy_profile.iter().all(|e| *e == 0.0));
    assert_eq!(sol.diagnostics.energy_estimate, 0.0);
}

#[test]
fn constant_driver_accumulates() {
    let p = BSDEProblem::eq1(unit_model(2.0), constant_driver(0.3), Terminal::constant(-1.0), 64);
    let sol = solve(&p).unwrap();
    assert!((sol.y0 - (-1.0 + 0.6)).abs() < 1e-13);
    let l = sol.lattice.as_ref().unwrap();
    let t = sol.times[10];
    assert!(l.y[10].iter().all(|y| (y - (-1.0 + 0.3 * (2.0 - t))).abs() < 1e-13));
}

#[test]
fn exponential_unconstrained_flat() {
    let model = MarketModel::black_scholes(0.1, 0.02, 0.3, 1.0).unwrap();
    let f = make_exponential_generator(&model, &ConstraintSet::full_space(1), 2.0).unwrap();
    let sol = solve(&BSDEProblem::eq1(model, f, Terminal::zero(), 400)).unwrap();
    let ml = 0.08 / 0.3;
    assert!((sol.y0 + ml * ml / 4.0).abs() < 1e-12);
    assert!((sol.y0 + 0.017778).abs() < 1e-6);
}

#[test]
fn quadratic_driver_matches_cole_hopf() {
    // Y_0 = ln E[exp(q B)] / q for F = (q/2) z^2 and m = 1.
    let (q, amp, k) = (1.5, 1.0, 2.0);
    let b = tanh_terminal(amp, k);
    let exact = gaussian_expectation(|w| (q * amp * (k * w).tanh()).exp(), 0.0, 1.0).ln() / q;
    let sol = solve(&BSDEProblem::eq1(unit_model(1.0), quadratic_driver(q), b, 800)).unwrap();
    assert!((sol.y0 - exact).abs() < 2e-3, "{} vs {exact}", sol.y0);
    assert_eq!(sol.diagnostics.bound_violations, 0);
}

#[test]
fn exponential_with_liability_matches_measure_change() {
    let model = MarketModel::black_scholes(0.08, 0.0, 0.4, 1.0).unwrap();
    let alpha = 1.0;
    let f = make_exponential_generator(&model, &ConstraintSet::full_space(1), alpha).unwrap();
    let b = tanh_terminal(0.5, 1.0);
    let ml = 0.08 / 0.4;
    let exact = gaussian_expectation(|w| 0.5 * w.tanh(), -ml, 1.0) - ml * ml / (2.0 * alpha);
    let sol = solve(&BSDEProblem::eq1(model, f, b, 400)).unwrap();
    assert!((sol.y0 - exact).abs() < 1e-3, "{} vs {exact}", sol.y0);
}

#[test]
fn comparison_on_lattice() {
    let lo = BSDEProblem::eq1(unit_model(1.0), quadratic_driver(1.0), tanh_terminal(1.0, 1.0), 200);
    let hi = BSDEProblem::eq1(unit_model(1.0), quadratic_driver(1.0).plus_constant(0.1), tanh_terminal(1.0, 1.0), 200);
    let (a, b) = (solve(&lo).unwrap(), solve(&hi).unwrap());
    let (la, lb) = (a.lattice.unwrap(), b.lattice.unwrap());
    for (ra, rb) in la.y.iter().zip(&lb.y) {
        for (ya, yb) in ra.iter().zip(rb) {
            assert!(ya <= yb);
        }
    }
}

#[test]
fn energy_profile_is_monotone() {
    let sol = solve(&BSDEProblem::eq1(unit_model(1.0), quadratic_driver(1.0), tanh_terminal(1.0, 3.0), 200)).unwrap();
    assert!(sol.energy_profile.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(*sol.energy_profile.last().unwrap(), 0.0);
    assert!(sol.diagnostics.energy_estimate >= sol.energy_profile[0] - 1e-12);
    assert!(sol.diagnostics.energy_estimate <= sol.diagnostics.energy_constant.unwrap());
}

#[test]
fn linear_in_y_driver() {
    // F = -y: Y_0 = B e^{-T} on the implicit grid up to O(dt).
    let spec = CustomDriver { linear_y: -1.0, ..Default::default() };
    let f = make_custom_generator(&unit_model(1.0), &spec).unwrap();
    let sol = solve(&BSDEProblem::eq1(unit_model(1.0), f, Terminal::constant(1.0), 100)).unwrap();
    assert!((sol.y0 - 1.01f64.powi(-100)).abs() < 1e-12);
    assert!(sol.diagnostics.picard_iters_max >= 2);
}

#[test]
fn lattice_rejects_higher_dimension() {
    let m = DMatrix::identity(2, 2);
    let model = MarketModel::constant(m, &[0.1, 0.2], 1.0).unwrap();
    let p = BSDEProblem::eq1(model, constant_driver(0.0), Terminal::zero(), 10);
    assert!(matches!(solve(&p), Err(Error::Unsupported(_))));
}

#[test]
fn regression_constant_driver() {
    let p = BSDEProblem::eq1(unit_model(1.0), constant_driver(0.25), Terminal::constant(1.0), 20)
        .with_backend(Backend::Regression)
        .with_regression(RegressionSettings { n_paths: 4000, basis_degree: 2, seed: 3, n_store: 8 });
    let sol = solve(&p).unwrap();
    assert!((sol.y0 - 1.25).abs() < 1e-12);
    assert!(sol.z0[0].abs() < 1e-12);
}

#[test]
fn regression_log_two_dimensional() {
    let m = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.05, 0.3]);
    let model = MarketModel::constant(m.clone(), &[1.0, 0.5], 1.0).unwrap();
    let f = make_log_generator(&model, &ConstraintSet::full_space(2)).unwrap().negated();
    let p = BSDEProblem::eq1(model, f, Terminal::zero(), 10)
        .with_backend(Backend::Regression)
        .with_regression(RegressionSettings { n_paths: 2000, basis_degree: 2, seed: 1, n_store: 4 });
    let sol = solve(&p).unwrap();
    let ml = linalg::mat_vec(&m, &[1.0, 0.5]);
    assert!((sol.y0 - 0.5 * linalg::norm_sq(&ml)).abs() < 1e-12);
}

#[test]
fn regression_agrees_with_lattice() {
    let base = BSDEProblem::eq1(unit_model(1.0), quadratic_driver(1.0), tanh_terminal(1.0, 1.0), 50);
    let lat = solve(&base).unwrap();
    let reg = solve(
        &base
            .clone()
            .with_backend(Backend::Regression)
            .with_regression(RegressionSettings { n_paths: 20_000, basis_degree: 5, seed: 7, n_store: 16 }),
    )
    .unwrap();
    let se = reg.regression.as_ref().unwrap().y0_std_err;
    assert!((lat.y0 - reg.y0).abs() < 4.0 * se + 5e-3, "{} vs {} (se {se})", lat.y0, reg.y0);
}

#[test]
fn regression_is_deterministic_in_seed() {
    let base = BSDEProblem::eq1(unit_model(1.0), quadratic_driver(1.0), tanh_terminal(1.0, 1.0), 10)
        .with_backend(Backend::Regression)
        .with_regression(RegressionSettings { n_paths: 3000, basis_degree: 3, seed: 11, n_store: 4 });
    let a = solve(&base).unwrap();
    let b = solve(&base).unwrap();
    assert_eq!(a.y0.to_bits(), b.y0.to_bits());
    assert_eq!(a.regression.unwrap().y_coef, b.regression.unwrap().y_coef);
}

#[test]
fn zero_steps_rejected() {
    let p = BSDEProblem::eq1(unit_model(1.0), constant_driver(0.0), Terminal::zero(), 0);
    assert!(matches!(solve(&p), Err(Error::InvalidArgument(_))));
}
