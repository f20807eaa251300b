//! Drivers `F(s, y, z)`, their growth certificates, and the a priori bound
//! formulas derived from those certificates.
//!
//! Drivers receive `(t, state, y, z)` where `state` is the value of `W_t`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{ensure, Error, Result};
use crate::halton;
use crate::linalg::{self, Point};
use crate::market::{MarketModel, ScalarField, VectorField};

pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// The process `alpha_bar` of the growth condition.
#[derive(Clone)]
pub enum AlphaBar {
    Constant(f64),
    Field(ScalarField),
}

impl AlphaBar {
    pub fn at(&self, t: f64, state: &[f64]) -> f64 {
        match self {
            AlphaBar::Constant(v) => *v,
            AlphaBar::Field(f) => f(t, state),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H1Variant {
    H1,
    H1Prime,
    H1DoublePrime,
}

/// `|F| <= alpha_bar + b alpha_bar |y| + (gamma / 2) |m z|^2` with
/// `int_0^T alpha_bar ds <= a`. The primed variant drops the `|y|` term; the
/// double-primed one adds the lower bound `-c1 (alpha_bar + |m z|) <= F`.
#[derive(Clone)]
pub struct H1Certificate {
    pub alpha_bar: AlphaBar,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub beta: f64,
    pub variant: H1Variant,
    pub c1: f64,
    pub horizon: f64,
}

impl fmt::Debug for H1Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("H1Certificate")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("gamma", &self.gamma)
            .field("beta", &self.beta)
            .field("variant", &self.variant)
            .field("c1", &self.c1)
            .finish_non_exhaustive()
    }
}

/// Plain-data view of a certificate for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Summary {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub beta: f64,
    pub variant: H1Variant,
    pub c1: f64,
    pub alpha_bar_constant: Option<f64>,
}

impl H1Certificate {
    /// Constant-rate certificate on `[0, horizon]`.
    pub fn constant(rate: f64, b: f64, gamma: f64, beta: f64, horizon: f64) -> Self {
        Self {
            alpha_bar: AlphaBar::Constant(rate),
            a: rate * horizon,
            b,
            gamma,
            beta,
            variant: H1Variant::H1,
            c1: 0.0,
            horizon,
        }
    }

    pub fn with_variant(mut self, variant: H1Variant, c1: f64) -> Self {
        self.variant = variant;
        self.c1 = c1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.a >= 0.0 && self.a.is_finite(), || format!("certificate a = {} must be finite and >= 0", self.a))?;
        ensure(self.b >= 0.0, || "certificate b must be >= 0".into())?;
        ensure(self.gamma > 0.0, || "certificate gamma must be > 0".into())?;
        ensure(self.gamma >= self.beta.abs() * (1.0 - 1e-12), || {
            format!("certificate needs gamma >= |beta| ({} < {})", self.gamma, self.beta.abs())
        })?;
        ensure(self.gamma >= self.b * (1.0 - 1e-12), || {
            format!("certificate needs gamma >= b ({} < {})", self.gamma, self.b)
        })
    }

    /// `int_t^T alpha_bar ds`, or the global bound `a` when the rate varies.
    pub fn remaining(&self, t: f64) -> f64 {
        match self.alpha_bar {
            AlphaBar::Constant(r) => r * (self.horizon - t).max(0.0),
            AlphaBar::Field(_) => self.a,
        }
    }

    pub fn summary(&self) -> H1Summary {
        H1Summary {
            a: self.a,
            b: self.b,
            gamma: self.gamma,
            beta: self.beta,
            variant: self.variant,
            c1: self.c1,
            alpha_bar_constant: match self.alpha_bar {
                AlphaBar::Constant(v) => Some(v),
                AlphaBar::Field(_) => None,
            },
        }
    }
}

#[derive(Clone)]
pub enum ThetaField {
    Constant(Point),
    Field(VectorField),
}

impl ThetaField {
    pub fn at(&self, t: f64, state: &[f64]) -> Point {
        match self {
            ThetaField::Constant(v) => v.clone(),
            ThetaField::Field(f) => f(t, state),
        }
    }
}

/// Monotonicity in `y` with constant `mu` and the local Lipschitz bound
/// `|F(z1) - F(z2)| <= c2 (|m theta| + |m z1| + |m z2|) |m (z1 - z2)|`.
#[derive(Clone)]
pub struct H2Certificate {
    pub mu: f64,
    pub c2: f64,
    pub theta: ThetaField,
    pub c_theta: f64,
}

impl fmt::Debug for H2Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("H2Certificate")
            .field("mu", &self.mu)
            .field("c2", &self.c2)
            .field("c_theta", &self.c_theta)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct GeneratorSpec {
    driver: DriverFn,
    pub h1: Option<H1Certificate>,
    pub h2: Option<H2Certificate>,
    pub beta: f64,
    pub name: String,
    pub y_independent: bool,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("name", &self.name)
            .field("beta", &self.beta)
            .field("h1", &self.h1)
            .field("h2", &self.h2)
            .finish()
    }
}

impl GeneratorSpec {
    pub fn new(name: impl Into<String>, beta: f64, driver: DriverFn) -> Self {
        Self { driver, h1: None, h2: None, beta, name: name.into(), y_independent: false }
    }

    pub fn with_h1(mut self, h1: H1Certificate) -> Self {
        self.h1 = Some(h1);
        self
    }

    pub fn with_h2(mut self, h2: H2Certificate) -> Self {
        self.h2 = Some(h2);
        self
    }

    pub fn y_independent(mut self, flag: bool) -> Self {
        self.y_independent = flag;
        self
    }

    pub fn eval(&self, t: f64, state: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.driver)(t, state, y, z)
    }

    pub fn driver(&self) -> &DriverFn {
        &self.driver
    }

    /// `-F` with the same two-sided certificates. A one-sided lower bound
    /// does not survive negation, so the double-primed variant is dropped.
    pub fn negated(&self) -> Self {
        let f = self.driver.clone();
        let mut out = self.clone();
        out.driver = Arc::new(move |t, x, y, z| -f(t, x, y, z));
        out.name = format!("-{}", self.name);
        if let Some(h1) = out.h1.as_mut() {
            if h1.variant == H1Variant::H1DoublePrime {
                h1.variant = if h1.b == 0.0 { H1Variant::H1Prime } else { H1Variant::H1 };
                h1.c1 = 0.0;
            }
        }
        out
    }

    /// `F + kappa`.
    pub fn plus_constant(&self, kappa: f64) -> Self {
        let f = self.driver.clone();
        let mut out = self.clone();
        out.driver = Arc::new(move |t, x, y, z| f(t, x, y, z) + kappa);
        out.name = format!("{} + {kappa}", self.name);
        if let Some(h1) = out.h1.as_mut() {
            // |F + kappa| <= (alpha_bar + |kappa|) + ...
            if let AlphaBar::Constant(r) = h1.alpha_bar {
                h1.alpha_bar = AlphaBar::Constant(r + kappa.abs());
                h1.a += kappa.abs() * h1.horizon;
                h1.b = if r + kappa.abs() > 0.0 { h1.b * r / (r + kappa.abs()) } else { 0.0 };
                h1.variant = if h1.b == 0.0 { H1Variant::H1Prime } else { H1Variant::H1 };
                h1.c1 = 0.0;
            } else {
                out.h1 = None;
            }
        }
        out
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    ensure(alpha.is_finite() && alpha > 0.0, || format!("alpha must be positive, got {alpha}"))
}

fn check_set(model: &MarketModel, set: &ConstraintSet) -> Result<()> {
    if set.dim() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: set.dim(), context: "constraint set" });
    }
    if !set.contains(&linalg::zeros(set.dim()), 0.0) {
        return Err(Error::OriginNotFeasible);
    }
    Ok(())
}

fn rate_field(model: &MarketModel, k: f64) -> AlphaBar {
    if let Some((m, lambda)) = model.constant_coefficients() {
        AlphaBar::Constant(k * linalg::norm_sq(&linalg::mat_vec(m, lambda)))
    } else {
        let model = model.clone();
        AlphaBar::Field(Arc::new(move |t, x| k * model.premium_rate(t, x)))
    }
}

fn theta_field(model: &MarketModel, k: f64) -> ThetaField {
    if let Some((_, lambda)) = model.constant_coefficients() {
        ThetaField::Constant(linalg::scale(lambda, k))
    } else {
        let model = model.clone();
        ThetaField::Field(Arc::new(move |t, x| linalg::scale(&model.premium(t, x), k)))
    }
}

/// `F^alpha(s, z) = (alpha/2) dist^2(z + lambda/alpha) - (m z)'(m lambda) - |m lambda|^2 / (2 alpha)`.
pub fn make_exponential_generator(model: &MarketModel, set: &ConstraintSet, alpha: f64) -> Result<GeneratorSpec> {
    check_alpha(alpha)?;
    check_set(model, set)?;
    let (mm, s) = (model.clone(), set.clone());
    let driver: DriverFn = Arc::new(move |t, x, _y, z| {
        let m = mm.vol(t, x);
        let lambda = mm.premium(t, x);
        let ml = linalg::mat_vec(&m, &lambda);
        let mz = linalg::mat_vec(&m, z);
        let target: Point = z.iter().zip(lambda.iter()).map(|(zi, li)| zi + li / alpha).collect();
        let dist = if s.is_full_space() { 0.0 } else { s.dist_sq_unchecked(&target, &m) };
        0.5 * alpha * dist - linalg::dot(&mz, &ml) - linalg::norm_sq(&ml) / (2.0 * alpha)
    });
    let alpha_bar = rate_field(model, 1.0 / alpha);
    let a = model.a_lambda() / alpha;
    let mut h1 = H1Certificate {
        alpha_bar,
        a,
        b: 0.0,
        gamma: alpha,
        beta: alpha,
        variant: H1Variant::H1,
        c1: 0.0,
        horizon: model.horizon(),
    };
    // F >= -(m z)'(m lambda) - |m lambda|^2/(2 alpha) is linear in |m z|.
    if let Some((m, lambda)) = model.constant_coefficients() {
        let ml = linalg::norm(&linalg::mat_vec(m, lambda));
        h1 = h1.with_variant(H1Variant::H1DoublePrime, ml.max(0.5));
    }
    let h2 = H2Certificate {
        mu: 0.0,
        c2: alpha / 2.0,
        theta: theta_field(model, 4.0 / alpha),
        c_theta: 16.0 * model.a_lambda() / (alpha * alpha),
    };
    Ok(GeneratorSpec::new(format!("exponential(alpha={alpha})"), alpha, driver)
        .with_h1(h1)
        .with_h2(h2)
        .y_independent(true))
}

/// `f1(s, z) = (g(1-g)/2) dist^2((z + lambda)/(1-g)) - (g(1-g)/2) |m (z + lambda)/(1-g)|^2 - |m z|^2 / 2`.
pub fn make_power_generator(model: &MarketModel, set: &ConstraintSet, gamma_u: f64) -> Result<GeneratorSpec> {
    ensure(gamma_u > 0.0 && gamma_u < 1.0, || format!("gamma_u must lie in (0, 1), got {gamma_u}"))?;
    check_set(model, set)?;
    let k = 0.5 * gamma_u * (1.0 - gamma_u);
    let inv = 1.0 / (1.0 - gamma_u);
    let (mm, s) = (model.clone(), set.clone());
    let driver: DriverFn = Arc::new(move |t, x, _y, z| {
        let m = mm.vol(t, x);
        let lambda = mm.premium(t, x);
        let target: Point = z.iter().zip(lambda.iter()).map(|(zi, li)| (zi + li) * inv).collect();
        let dist = if s.is_full_space() { 0.0 } else { s.dist_sq_unchecked(&target, &m) };
        let full = linalg::norm_sq(&linalg::mat_vec(&m, &target));
        k * dist - k * full - 0.5 * linalg::norm_sq(&linalg::mat_vec(&m, z))
    });
    let q = gamma_u / (1.0 - gamma_u);
    let h1 = H1Certificate {
        alpha_bar: rate_field(model, q),
        a: q * model.a_lambda(),
        b: 0.0,
        gamma: 2.0 * q + 1.0,
        beta: 0.5,
        variant: H1Variant::H1,
        c1: 0.0,
        horizon: model.horizon(),
    };
    let c2 = q + 0.5;
    let h2 = H2Certificate {
        mu: 0.0,
        c2,
        theta: theta_field(model, 2.0 * q / c2),
        c_theta: (2.0 * q / c2).powi(2) * model.a_lambda(),
    };
    Ok(GeneratorSpec::new(format!("power(gamma={gamma_u})"), 0.5, driver)
        .with_h1(h1)
        .with_h2(h2)
        .y_independent(true))
}

/// `f2(s) = (1/2) dist^2(lambda) - (1/2) |m lambda|^2`.
pub fn make_log_generator(model: &MarketModel, set: &ConstraintSet) -> Result<GeneratorSpec> {
    check_set(model, set)?;
    let (mm, s) = (model.clone(), set.clone());
    let driver: DriverFn = Arc::new(move |t, x, _y, _z| {
        let m = mm.vol(t, x);
        let lambda = mm.premium(t, x);
        let dist = if s.is_full_space() { 0.0 } else { s.dist_sq_unchecked(&lambda, &m) };
        0.5 * dist - 0.5 * linalg::norm_sq(&linalg::mat_vec(&m, &lambda))
    });
    let h1 = H1Certificate {
        alpha_bar: rate_field(model, 0.5),
        a: 0.5 * model.a_lambda(),
        b: 0.0,
        gamma: 1.0,
        beta: 0.0,
        variant: H1Variant::H1DoublePrime,
        c1: 1.0,
        horizon: model.horizon(),
    };
    let h2 = H2Certificate { mu: 0.0, c2: 0.0, theta: ThetaField::Constant(linalg::zeros(model.dim())), c_theta: 0.0 };
    Ok(GeneratorSpec::new("log", 0.0, driver).with_h1(h1).with_h2(h2).y_independent(true))
}

/// Table-defined driver `F = constant + linear_y y + linear_z . z + (quadratic_z / 2) |m z|^2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomDriver {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub linear_y: f64,
    #[serde(default)]
    pub linear_z: Option<Vec<f64>>,
    #[serde(default)]
    pub quadratic_z: f64,
    #[serde(default)]
    pub beta: f64,
}

/// Builds a table driver. Certificates are derived when the model has
/// constant coefficients.
pub fn make_custom_generator(model: &MarketModel, spec: &CustomDriver) -> Result<GeneratorSpec> {
    let d = model.dim();
    let w: Point = match &spec.linear_z {
        Some(v) if v.len() != d => {
            return Err(Error::Dimension { expected: d, got: v.len(), context: "custom linear_z" })
        }
        Some(v) => linalg::point(v),
        None => linalg::zeros(d),
    };
    ensure(spec.quadratic_z >= 0.0, || "custom quadratic_z must be >= 0".into())?;
    let CustomDriver { constant, linear_y, quadratic_z, beta, .. } = *spec;
    let mm = model.clone();
    let ww = w.clone();
    let driver: DriverFn = Arc::new(move |t, x, y, z| {
        let mut f = constant + linear_y * y + linalg::dot(&ww, z);
        if quadratic_z != 0.0 {
            let m = mm.vol(t, x);
            f += 0.5 * quadratic_z * linalg::norm_sq(&linalg::mat_vec(&m, z));
        }
        f
    });
    let mut out = GeneratorSpec::new(
        format!("custom(c={constant}, ly={linear_y}, lz={:?}, q={quadratic_z})", w.as_slice()),
        beta,
        driver,
    )
    .y_independent(linear_y == 0.0);
    if let Some((m, _)) = model.constant_coefficients() {
        // w.z = (m^{-T} w).(m z)
        let wt = linalg::solve(&m.transpose(), &w);
        let wn = linalg::norm(&wt);
        let linear = wn > 0.0;
        let rate = (constant.abs() + if linear { 0.5 * wn * wn } else { 0.0 }).max(linear_y.abs()).max(1e-12);
        let b = linear_y.abs() / rate;
        let gamma = (quadratic_z + if linear { 1.0 } else { 0.0 }).max(b).max(beta.abs()).max(1e-12);
        let mut h1 = H1Certificate::constant(rate, b, gamma, beta, model.horizon());
        if quadratic_z == 0.0 && linear_y == 0.0 {
            // |F| <= |constant| + |m^{-T} w| |m z|: linear lower bound.
            let c1 = if rate > 0.0 { (constant.abs() / rate).max(wn).max(1.0) } else { wn.max(1.0) };
            h1 = h1.with_variant(H1Variant::H1DoublePrime, c1);
        } else if linear_y == 0.0 {
            h1.variant = H1Variant::H1Prime;
        }
        out = out.with_h1(h1);
        let c2 = if quadratic_z > 0.0 { 0.5 * quadratic_z } else { 1.0 };
        let theta_m = linalg::scale(&wt, 1.0 / c2);
        let theta = linalg::solve(m, &theta_m);
        out = out.with_h2(H2Certificate {
            mu: linear_y,
            c2,
            theta: ThetaField::Constant(theta),
            c_theta: linalg::norm_sq(&theta_m) * model.horizon(),
        });
    }
    Ok(out)
}

/// Envelope `c_low <= Y <= c_high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub c_low: f64,
    pub c_high: f64,
}

/// `(e^{b a} - 1) / b`, continuous at `b = 0`.
pub fn a_tilde(a: f64, b: f64) -> f64 {
    if b * a == 0.0 {
        a
    } else {
        (b * a).exp_m1() / b
    }
}

/// `c_high = -c_low = a_tilde + |B|_inf e^{b a}`.
pub fn apriori_bounds(h1: &H1Certificate, b_sup: f64) -> Bounds {
    let c = a_tilde(h1.a, h1.b) + b_sup * (h1.b * h1.a).exp();
    Bounds { c_low: -c, c_high: c }
}

/// Bound on the conditional remaining energy of `Z`:
/// `2 [psi_g(2K) + psi_g'(2K) a (1 + b K)]` with `K = c_high`.
pub fn energy_constant(h1: &H1Certificate, b_sup: f64) -> f64 {
    let k = apriori_bounds(h1, b_sup).c_high;
    2.0 * (psi_gamma(h1.gamma, 2.0 * k) + psi_gamma_prime(h1.gamma, 2.0 * k) * h1.a * (1.0 + h1.b * k))
}

/// `(e^{g x} - 1 - g x) / g^2`.
pub fn psi_gamma(gamma: f64, x: f64) -> f64 {
    let gx = gamma * x;
    if gx.abs() < 1e-5 {
        x * x * (0.5 + gx / 6.0 + gx * gx / 24.0)
    } else {
        (gx.exp_m1() - gx) / (gamma * gamma)
    }
}

/// `(e^{g x} - 1) / g`.
pub fn psi_gamma_prime(gamma: f64, x: f64) -> f64 {
    let gx = gamma * x;
    if gx == 0.0 {
        x
    } else {
        gx.exp_m1() / gamma
    }
}

/// `(e^{L x} - L x - 1) / L^2`.
pub fn phi_l(l: f64, x: f64) -> f64 {
    psi_gamma(l, x)
}

pub fn phi_l_prime(l: f64, x: f64) -> f64 {
    psi_gamma_prime(l, x)
}

pub fn phi_l_second(l: f64, x: f64) -> f64 {
    (l * x).exp()
}

/// `phi_t(z) = exp(g (e^{b a_t} - 1)/b) exp(g z e^{b a_t})` with `a_t = int_t^T alpha_bar`.
pub fn phi(h1: &H1Certificate, t: f64, z: f64) -> f64 {
    let at = h1.remaining(t);
    (h1.gamma * a_tilde(at, h1.b) + h1.gamma * z * (h1.b * at).exp()).exp()
}

/// Compact sampling box over `(s, state, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub t: (f64, f64),
    pub state: Vec<(f64, f64)>,
    pub y: (f64, f64),
    pub z: Vec<(f64, f64)>,
    pub n: usize,
}

impl SampleBox {
    pub fn around(model: &MarketModel, y_half: f64, z_half: f64) -> Self {
        let d = model.dim();
        let w = 3.0 * model.horizon().sqrt();
        Self {
            t: (0.0, model.horizon()),
            state: vec![(-w, w); d],
            y: (-y_half, y_half),
            z: vec![(-z_half, z_half); d],
            n: 10_000,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub pass: bool,
    pub worst_slack: f64,
    pub n_samples: usize,
    pub worst_point: Vec<f64>,
}

const CERT_RTOL: f64 = 1e-10;

struct SlackTracker {
    worst: f64,
    worst_norm: f64,
    point: Vec<f64>,
}

impl SlackTracker {
    fn new() -> Self {
        Self { worst: f64::INFINITY, worst_norm: f64::INFINITY, point: Vec::new() }
    }

    fn record(&mut self, lhs: f64, rhs: f64, p: &[f64]) {
        let slack = rhs - lhs;
        let norm = if slack.is_nan() { f64::NEG_INFINITY } else { slack / (1.0 + rhs.abs().max(lhs.abs())) };
        if norm < self.worst_norm {
            self.worst_norm = norm;
            self.worst = slack;
            self.point = p.to_vec();
        }
    }

    fn report(self, n: usize) -> CertificateReport {
        CertificateReport { pass: self.worst_norm >= -CERT_RTOL, worst_slack: self.worst, n_samples: n, worst_point: self.point }
    }
}

/// Checks the declared growth inequalities of `spec.h1` on `sampler`.
pub fn check_h1(spec: &GeneratorSpec, model: &MarketModel, sampler: &SampleBox) -> Result<CertificateReport> {
    let h1 = spec.h1.as_ref().ok_or(Error::MissingCertificate("H1"))?;
    let d = model.dim();
    let mut ranges = vec![sampler.t];
    ranges.extend(sampler.state.iter().copied());
    ranges.push(sampler.y);
    ranges.extend(sampler.z.iter().copied());
    ensure(ranges.len() == 2 + 2 * d, || "sample box dimension does not match the model".into())?;
    let mut tr = SlackTracker::new();
    for p in halton::box_points(&ranges, sampler.n) {
        let (t, x, y, z) = (p[0], &p[1..1 + d], p[1 + d], &p[2 + d..]);
        let f = spec.eval(t, x, y, z);
        let m = model.vol(t, x);
        let mz = linalg::weighted_norm(&m, z);
        let ab = h1.alpha_bar.at(t, x);
        let quad = 0.5 * h1.gamma * mz * mz;
        let upper = match h1.variant {
            H1Variant::H1Prime => ab + quad,
            _ => ab + h1.b * ab * y.abs() + quad,
        };
        tr.record(f.abs(), upper, &p);
        if h1.variant == H1Variant::H1DoublePrime {
            tr.record(-f, h1.c1 * (ab + mz), &p);
        }
    }
    Ok(tr.report(sampler.n))
}

/// Checks monotonicity in `y` and the local Lipschitz bound in `z` on
/// pairs drawn from `sampler`.
pub fn check_h2(spec: &GeneratorSpec, model: &MarketModel, sampler: &SampleBox) -> Result<CertificateReport> {
    let h2 = spec.h2.as_ref().ok_or(Error::MissingCertificate("H2"))?;
    let d = model.dim();
    let mut ranges = vec![sampler.t];
    ranges.extend(sampler.state.iter().copied());
    ranges.push(sampler.y);
    ranges.push(sampler.y);
    ranges.extend(sampler.z.iter().copied());
    ranges.extend(sampler.z.iter().copied());
    ensure(ranges.len() == 3 + 3 * d, || "sample box dimension does not match the model".into())?;
    let mut tr = SlackTracker::new();
    for p in halton::box_points(&ranges, sampler.n) {
        let t = p[0];
        let x = &p[1..1 + d];
        let (y1, y2) = (p[1 + d], p[2 + d]);
        let z1 = &p[3 + d..3 + 2 * d];
        let z2 = &p[3 + 2 * d..3 + 3 * d];
        let m = model.vol(t, x);
        let dy = y1 - y2;
        let mono = dy * (spec.eval(t, x, y1, z1) - spec.eval(t, x, y2, z1));
        tr.record(mono, h2.mu * dy * dy, &p);
        let lhs = (spec.eval(t, x, y1, z1) - spec.eval(t, x, y1, z2)).abs();
        let theta = h2.theta.at(t, x);
        let rhs = h2.c2
            * (linalg::weighted_norm(&m, &theta) + linalg::weighted_norm(&m, z1) + linalg::weighted_norm(&m, z2))
            * linalg::weighted_norm(&m, &linalg::sub(z1, z2));
        tr.record(lhs, rhs, &p);
    }
    Ok(tr.report(sampler.n))
}

/// `|m lambda|` for a constant model, used by tests and reports.
pub fn premium_norm(m: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    linalg::norm(&linalg::mat_vec(m, lambda))
}
