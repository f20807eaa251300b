use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;

use qbsde::constraints::ConstraintSet;
use qbsde::generators::{make_custom_generator, CustomDriver};
use qbsde::maximize::{closed_form_y0, optimal_strategy, value_function, UtilitySpec};
use qbsde::solver::{solve, Backend, BSDEProblem, RegressionSettings};
use qbsde::terminal::{Terminal, TerminalSpec};
use qbsde::transform::{self, ConvolutionGrid, Eq2Problem};
use qbsde::verify;
use qbsde::MarketModel;

/// `E[f(X)]` for `X ~ N(mean, var)` by composite Simpson on +-12 sd.
fn normal_mean(f: impl Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let n = 8000;
    let (a, b) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let h = (b - a) / n as f64;
    let density = |x: f64| (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let mut s = 0.0;
    for k in 0..=n {
        let x = a + k as f64 * h;
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(x) * density(x);
    }
    s * h / 3.0
}

fn tanh_spec(amp: f64, k: f64) -> TerminalSpec {
    TerminalSpec::Tanh { weights: vec![k], amplitude: amp, offset: 0.0 }
}

#[test]
fn quadratic_driver_against_cole_hopf() {
    // F = (q/2) z^2, m = 1: Y_0 = ln E[exp(q B(W_T))] / q.
    let model = MarketModel::black_scholes(0.05, 0.05, 1.0, 1.0).unwrap();
    let q = 1.0;
    let f = make_custom_generator(&model, &CustomDriver { quadratic_z: q, beta: q, ..Default::default() }).unwrap();
    let b = Terminal::from_spec(&tanh_spec(1.0, 1.5), 1).unwrap();
    let exact = normal_mean(|w| (q * (1.5 * w).tanh()).exp(), 0.0, 1.0).ln() / q;
    let sol = solve(&BSDEProblem::eq1(model, f, b, 1000)).unwrap();
    assert_abs_diff_eq!(sol.y0, exact, epsilon = 2e-3);
}

#[test]
fn exponential_liability_under_the_minimal_measure() {
    let model = MarketModel::black_scholes(0.1, 0.02, 0.25, 1.5).unwrap();
    let alpha = 1.5;
    let ml = 0.08 / 0.25;
    let u = UtilitySpec::exponential(alpha, 0.0).with_liability(tanh_spec(0.8, 1.0));
    let full = ConstraintSet::full_space(1);
    let exact = normal_mean(|w| 0.8 * w.tanh(), -ml * 1.5, 1.5) - ml * ml * 1.5 / (2.0 * alpha);
    let sol = solve(&u.problem(&model, &full, 800).unwrap()).unwrap();
    assert_abs_diff_eq!(sol.y0, exact, epsilon = 1e-3);
    assert_abs_diff_eq!(closed_form_y0(&u, &model, &full).unwrap().unwrap(), exact, epsilon = 1e-8);
}

#[test]
fn regression_log_utility_two_assets() {
    let m = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.1, 0.3]);
    let lambda = [1.2, 0.4];
    let model = MarketModel::constant(m.clone(), &lambda, 2.0).unwrap();
    let u = UtilitySpec::log(3.0);
    let problem = u
        .problem(&model, &ConstraintSet::full_space(2), 8)
        .unwrap()
        .with_backend(Backend::Regression)
        .with_regression(RegressionSettings { n_paths: 5000, basis_degree: 2, seed: 5, n_store: 4 });
    let sol = solve(&problem).unwrap();
    let ml = [0.25 * 1.2, 0.1 * 1.2 + 0.3 * 0.4];
    let exact = 3f64.ln() + 0.5 * (ml[0] * ml[0] + ml[1] * ml[1]) * 2.0;
    assert_abs_diff_eq!(value_function(&u, &sol).unwrap(), exact, epsilon = 1e-10);
}

#[test]
fn regression_power_utility_two_assets_with_box() {
    // With B = 0 and constant coefficients Y is deterministic, so the
    // regression solve must agree with the lattice-free closed form.
    let m = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.4]);
    let model = MarketModel::constant(m, &[2.0, 0.5], 1.0).unwrap();
    let set = ConstraintSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let u = UtilitySpec::power(0.5, 1.0);
    let problem = u
        .problem(&model, &set, 5)
        .unwrap()
        .with_backend(Backend::Regression)
        .with_regression(RegressionSettings { n_paths: 2000, basis_degree: 2, seed: 9, n_store: 4 });
    let sol = solve(&problem).unwrap();
    let exact = closed_form_y0(&u, &model, &set).unwrap().unwrap();
    assert_abs_diff_eq!(sol.y0, exact, epsilon = 1e-10);
    // Unconstrained optimum lambda/(1-g) = (4, 1) is cut back to the box.
    let s = optimal_strategy(&u, &sol, &model, &set).unwrap();
    assert_abs_diff_eq!(s.values[0][0][0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(s.values[0][0][1], 1.0, epsilon = 1e-9);
}

#[test]
fn linear_eq2_grows_geometrically() {
    let model = MarketModel::black_scholes(0.0, 0.0, 1.0, 1.0).unwrap();
    let g = Eq2Problem::new("u", Arc::new(|_, _, u, _| u), Terminal::constant(1.0));
    let sol = solve(&BSDEProblem::eq2(model, g, 200)).unwrap();
    assert_abs_diff_eq!(sol.y0, (1.0 - 1.0 / 200.0f64).powi(-200), epsilon = 1e-10);
    assert_abs_diff_eq!(sol.y0, std::f64::consts::E, epsilon = 2e-2);
}

#[test]
fn transformed_solve_maps_back() {
    let model = MarketModel::black_scholes(0.08, 0.0, 0.4, 1.0).unwrap();
    let u = UtilitySpec::exponential(1.0, 0.0).with_liability(tanh_spec(0.5, 1.0));
    let set = ConstraintSet::boxed(vec![-0.5], vec![0.5]).unwrap();
    let p = u.problem(&model, &set, 400).unwrap();
    let r = verify::check_transform(&p, 1.0).unwrap();
    assert!(r.passed(), "{r:?}");
    assert!(r.components["y0_gap"] < 5e-3);
}

#[test]
fn huber_from_quadratic() {
    let model = MarketModel::black_scholes(0.0, 0.0, 1.0, 1.0).unwrap();
    let g = verify::quadratic_eq2(1.0, Terminal::zero());
    let grid = ConvolutionGrid::uniform((-1.0, 1.0), &[(-10.0, 10.0)], 2001).unwrap();
    let n = 3.0;
    let gn = transform::inf_convolve(&g, &model, n, &grid).unwrap();
    for v in [-7.3, -3.0, -1.2, 0.0, 0.4, 2.9, 3.1, 9.0f64] {
        let huber = if v.abs() <= n { 0.5 * v * v } else { n * v.abs() - 0.5 * n * n };
        assert_abs_diff_eq!(gn.eval(0.0, &[0.0], 0.0, &[v]), huber, epsilon = 1e-9);
    }
}

#[test]
fn appendix_constant_grows_with_lipschitz_constant() {
    let ks: Vec<f64> = [0.0, 0.25, 1.0, 2.0, 5.0].iter().map(|l| verify::prop2_constant(*l, 1.0)).collect();
    assert!(ks.windows(2).all(|w| w[0] < w[1]));
    // At L = 0 only the BDG factor remains.
    assert_abs_diff_eq!(ks[0], 16.0 * (1.0 + 16.0 * 9.0f64).powi(2), epsilon = 1e-6);
}
