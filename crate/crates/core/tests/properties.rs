use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use qbsde::constraints::{ConstraintKind, ConstraintSet};
use qbsde::generators::{apriori_bounds, make_custom_generator, make_exponential_generator, CustomDriver};
use qbsde::linalg;
use qbsde::maximize::UtilitySpec;
use qbsde::solver::{solve, BSDEProblem};
use qbsde::terminal::{Terminal, TerminalSpec};
use qbsde::transform::{self, ConvolutionGrid, Eq2Problem};
use qbsde::MarketModel;

fn diag2() -> impl Strategy<Value = DMatrix<f64>> {
    (0.2..2.0f64, -0.5..0.5f64, 0.2..2.0f64).prop_map(|(a, b, c)| DMatrix::from_row_slice(2, 2, &[a, 0.0, b, c]))
}

fn set2() -> impl Strategy<Value = ConstraintSet> {
    prop_oneof![
        (0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64)
            .prop_map(|(a, b, c, d)| ConstraintSet::boxed(vec![-a, -b], vec![c, d]).unwrap()),
        (0.1..2.0f64).prop_map(|r| ConstraintSet::new(ConstraintKind::Ball { center: vec![0.0, 0.0], radius: r }, 2).unwrap()),
        (-1.0..1.0f64, -1.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, c)| {
            ConstraintSet::new(ConstraintKind::Halfspace { normal: vec![a, b + 1.5], offset: c }, 2).unwrap()
        }),
        prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..5).prop_map(|pts| {
            let mut points: Vec<Vec<f64>> = pts.into_iter().map(|(a, b)| vec![a, b]).collect();
            points.push(vec![0.0, 0.0]);
            ConstraintSet::new(ConstraintKind::FiniteSet { points }, 2).unwrap()
        }),
        (0.0..1.0f64, -2.0..2.0f64).prop_map(|(h, p)| {
            ConstraintSet::new(
                ConstraintKind::Union {
                    members: vec![
                        ConstraintKind::Box { lower: vec![-h, -h], upper: vec![h, h] },
                        ConstraintKind::Singleton { point: vec![p, 1.0] },
                    ],
                },
                2,
            )
            .unwrap()
        }),
    ]
}

fn candidates(set: &ConstraintSet) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in -20..=20 {
        for j in -20..=20 {
            let p = vec![i as f64 * 0.1, j as f64 * 0.1];
            if set.contains(&p, 0.0) {
                out.push(p);
            }
        }
    }
    if let ConstraintKind::FiniteSet { points } = set.kind() {
        out.extend(points.iter().cloned());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_idempotent_and_nearest(
        m in diag2(), set in set2(), x in -3.0..3.0f64, y in -3.0..3.0f64,
    ) {
        let target = [x, y];
        let p = set.project(&target, &m).unwrap();
        prop_assert!(set.contains(&p, 1e-9));
        let again = set.project(&p, &m).unwrap();
        prop_assert!(linalg::norm(&linalg::sub(&again, &p)) < 1e-7);
        let best = linalg::weighted_dist_sq(&m, &p, &target);
        for c in candidates(&set) {
            prop_assert!(best <= linalg::weighted_dist_sq(&m, &c, &target) + 1e-7);
        }
        prop_assert!((set.dist_sq(&target, &m).unwrap() - best).abs() < 1e-9 * (1.0 + best));
    }

    #[test]
    fn exponential_change_of_variable_inverts(y in -5.0..5.0f64, z in -3.0..3.0f64, beta in prop_oneof![-3.0..-0.1f64, 0.1..3.0f64]) {
        let u = (beta * y).exp();
        let v = [z * beta * u];
        let (y2, z2) = transform::from_eq2_values(u, &v, beta).unwrap();
        prop_assert!((y2 - y).abs() < 1e-12 * (1.0 + y.abs()));
        prop_assert!((z2[0] - z).abs() < 1e-12 * (1.0 + z.abs()));
    }

    #[test]
    fn transformed_driver_matches_ito(
        alpha in 0.3..3.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64, sigma in 0.1..1.0f64,
    ) {
        // g(u, v) = beta u F(y, z) - |m v|^2/(2u) at u = e^{beta y}, v = beta u z.
        let model = MarketModel::black_scholes(0.1, 0.02, sigma, 1.0).unwrap();
        let f = make_exponential_generator(&model, &ConstraintSet::full_space(1), alpha).unwrap();
        let g = transform::to_eq2(&f, alpha, &Terminal::zero(), &model).unwrap();
        let u = (alpha * y).exp();
        let v = alpha * u * z;
        let expected = alpha * u * f.eval(0.0, &[0.0], y, &[z]) - (sigma * v).powi(2) / (2.0 * u);
        let got = g.eval(0.0, &[0.0], u, &[v]);
        prop_assert!((got - expected).abs() < 1e-10 * (1.0 + expected.abs()));
    }

    #[test]
    fn utility_scale_identities(alpha in 0.1..4.0f64, g in 0.05..0.95f64, x in 0.1..5.0f64, h in -2.0..2.0f64, k in 0.1..5.0f64, y in -1.0..1.0f64) {
        let e = UtilitySpec::exponential(alpha, 0.0);
        let lhs = e.compose(x + h, y).unwrap();
        let rhs = (-alpha * h).exp() * e.compose(x, y).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1e-300));
        let p = UtilitySpec::power(g, 1.0);
        let lhs = p.compose(k * x, y).unwrap();
        prop_assert!((lhs - k.powf(g) * p.compose(x, y).unwrap()).abs() < 1e-12 * lhs.abs());
        let l = UtilitySpec::log(1.0);
        prop_assert!((l.compose(k * x, y).unwrap() - k.ln() - l.compose(x, y).unwrap()).abs() < 1e-12);
    }
}

fn custom(c: f64, ly: f64, lz: f64, q: f64) -> CustomDriver {
    CustomDriver { constant: c, linear_y: ly, linear_z: Some(vec![lz]), quadratic_z: q, beta: q.max(0.5) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lattice_values_respect_apriori_bounds(
        c in -0.5..0.5f64, ly in -0.5..0.5f64, lz in -0.5..0.5f64, q in 0.0..2.0f64,
        amp in 0.0..1.5f64, k in 0.1..3.0f64,
    ) {
        let model = MarketModel::black_scholes(0.05, 0.0, 1.0, 1.0).unwrap();
        let f = make_custom_generator(&model, &custom(c, ly, lz, q)).unwrap();
        let b = Terminal::from_spec(&TerminalSpec::Tanh { weights: vec![k], amplitude: amp, offset: 0.0 }, 1).unwrap();
        let h1 = f.h1.clone().expect("constant coefficients carry a certificate");
        let bounds = apriori_bounds(&h1, b.sup_norm());
        let sol = solve(&BSDEProblem::eq1(model, f, b, 100)).unwrap();
        for (_, y) in sol.y_values() {
            prop_assert!(y >= bounds.c_low - 0.1 && y <= bounds.c_high + 0.1, "{y} outside [{}, {}]", bounds.c_low, bounds.c_high);
        }
    }

    #[test]
    fn lattice_solution_is_monotone_in_data(
        c in -0.5..0.5f64, q in 0.0..1.5f64, amp in 0.1..1.0f64, k in 0.1..2.0f64,
        dc in 0.0..0.3f64, ds in 0.0..0.3f64,
    ) {
        let model = MarketModel::black_scholes(0.05, 0.0, 1.0, 1.0).unwrap();
        let b = Terminal::from_spec(&TerminalSpec::Tanh { weights: vec![k], amplitude: amp, offset: 0.0 }, 1).unwrap();
        let lo = make_custom_generator(&model, &custom(c, 0.0, 0.0, q)).unwrap();
        let hi = make_custom_generator(&model, &custom(c + dc, 0.0, 0.0, q)).unwrap();
        let s1 = solve(&BSDEProblem::eq1(model.clone(), lo, b.clone(), 100)).unwrap();
        let s2 = solve(&BSDEProblem::eq1(model, hi, b.shifted(ds), 100)).unwrap();
        for ((_, a), (_, b)) in s1.y_values().zip(s2.y_values()) {
            prop_assert!(a <= b + 1e-12);
        }
        // A constant shift of the data shifts Y by exactly that much at t = 0.
        prop_assert!((s2.y0 - s1.y0 - ds - dc).abs() < 1e-9);
    }

    #[test]
    fn inf_convolution_is_below_and_increasing(n1 in 0.5..4.0f64, dn in 0.1..4.0f64, v in -4.0..4.0f64, u in -1.0..1.0f64) {
        let model = MarketModel::black_scholes(0.0, 0.0, 1.0, 1.0).unwrap();
        let g = Eq2Problem::new("quad", Arc::new(|_, _, u: f64, v: &[f64]| 0.5 * v[0] * v[0] + 0.1 * u * u), Terminal::zero());
        let grid = ConvolutionGrid::uniform((-1.0, 1.0), &[(-5.0, 5.0)], 81).unwrap();
        let a = transform::inf_convolve(&g, &model, n1, &grid).unwrap();
        let b = transform::inf_convolve(&g, &model, n1 + dn, &grid).unwrap();
        let (ga, gb, g0) = (a.eval(0.0, &[0.0], u, &[v]), b.eval(0.0, &[0.0], u, &[v]), g.eval(0.0, &[0.0], u, &[v]));
        prop_assert!(ga <= gb + 1e-12);
        prop_assert!(gb <= g0 + 1e-12);
    }
}
