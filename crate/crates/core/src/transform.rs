//! The change of variable `U = exp(beta Y)`, the truncations that make the
//! transformed driver globally well behaved, and the inf-convolution ladder.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::generators::{AlphaBar, CertificateReport, DriverFn, GeneratorSpec, H1Certificate, H1Variant};
use crate::halton;
use crate::linalg::{self, Point};
use crate::market::MarketModel;
use crate::solver::DiscreteSolution;
use crate::terminal::Terminal;

/// A BSDE `dU = -g(s, U, V) ds + V dM`, `U_T = terminal`.
#[derive(Clone)]
pub struct Eq2Problem {
    g: DriverFn,
    pub terminal: Terminal,
    /// Set when `g` is `n`-Lipschitz in `(u, m v)`.
    pub lipschitz_n: Option<f64>,
    pub h1: Option<H1Certificate>,
    pub depends_on_u: bool,
    /// `g` does not depend on `(t, state)`.
    pub homogeneous: bool,
    pub name: String,
}

impl fmt::Debug for Eq2Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Eq2Problem")
            .field("name", &self.name)
            .field("terminal", &self.terminal)
            .field("lipschitz_n", &self.lipschitz_n)
            .finish_non_exhaustive()
    }
}

impl Eq2Problem {
    pub fn new(name: impl Into<String>, g: DriverFn, terminal: Terminal) -> Self {
        Self { g, terminal, lipschitz_n: None, h1: None, depends_on_u: true, homogeneous: false, name: name.into() }
    }

    pub fn with_lipschitz(mut self, n: f64) -> Self {
        self.lipschitz_n = Some(n);
        self
    }

    pub fn with_h1(mut self, h1: H1Certificate) -> Self {
        self.h1 = Some(h1);
        self
    }

    /// Declares `g` independent of `(t, state)` and, optionally, of `u`.
    pub fn homogeneous(mut self, depends_on_u: bool) -> Self {
        self.homogeneous = true;
        self.depends_on_u = depends_on_u;
        self
    }

    pub fn with_terminal(mut self, terminal: Terminal) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn eval(&self, t: f64, state: &[f64], u: f64, v: &[f64]) -> f64 {
        (self.g)(t, state, u, v)
    }

    pub fn driver(&self) -> &DriverFn {
        &self.g
    }
}

fn check_beta(beta: f64) -> Result<()> {
    ensure(beta != 0.0 && beta.is_finite(), || "the exponential transform needs beta != 0".into())
}

fn exp_terminal(terminal: &Terminal, beta: f64) -> Terminal {
    terminal.map("exp_beta", (beta.abs() * terminal.sup_norm()).exp(), move |b| (beta * b).exp())
}

/// `g(s, u, v) = (beta u F(s, ln(u)/beta, v/(beta u)) - |m v|^2 / (2u)) 1_{u > 0}`
/// with terminal `exp(beta B)`.
pub fn to_eq2(f: &GeneratorSpec, beta: f64, terminal: &Terminal, model: &MarketModel) -> Result<Eq2Problem> {
    check_beta(beta)?;
    let (drv, mm) = (f.driver().clone(), model.clone());
    let g: DriverFn = Arc::new(move |t, x, u, v| {
        if u <= 0.0 {
            return 0.0;
        }
        let m = mm.vol(t, x);
        let z: Point = v.iter().map(|vi| vi / (beta * u)).collect();
        beta * u * drv(t, x, u.ln() / beta, &z) - linalg::norm_sq(&linalg::mat_vec(&m, v)) / (2.0 * u)
    });
    Ok(Eq2Problem::new(format!("eq2({})", f.name), g, exp_terminal(terminal, beta)))
}

/// Maps an `Eq2` solution back by `Y = ln(U)/beta`, `Z = V/(beta U)`.
pub fn from_eq2_solution(sol: &DiscreteSolution, beta: f64, terminal: Terminal) -> Result<DiscreteSolution> {
    check_beta(beta)?;
    sol.map_values(terminal, |i, j, u, v| {
        let (y, z) = from_eq2_values(u, v, beta).map_err(|_| Error::NonPositive { step: i, node: j, value: u })?;
        Ok((y, z))
    })
}

/// Scalar version of [`from_eq2_solution`].
pub fn from_eq2_values(u: f64, v: &[f64], beta: f64) -> Result<(f64, Point)> {
    check_beta(beta)?;
    if !(u > 0.0) {
        return Err(Error::NonPositive { step: 0, node: 0, value: u });
    }
    Ok((u.ln() / beta, v.iter().map(|vi| vi / (beta * u)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationConstants {
    pub c1: f64,
    pub c2: f64,
    pub k: f64,
}

/// `c2 = e^{|beta| a} - 1 + e^{|beta| |B|} e^{|beta| a}`,
/// `c1 = e^{-|beta| (|B| + a)}`, `K = |c| + |C|` for a driver with `b = 0`.
pub fn truncation_constants(a: f64, beta: f64, b_sup: f64) -> TruncationConstants {
    let ab = beta.abs() * a;
    let c2 = ab.exp_m1() + (beta.abs() * b_sup).exp() * ab.exp();
    let c1 = (-beta.abs() * (b_sup + a)).exp();
    TruncationConstants { c1, c2, k: 2.0 * (a + b_sup) }
}

/// `F^K(s, y, z) = F(s, clamp(y, -K, K), z)`. The certificate becomes the
/// primed one with `alpha_bar (1 + b K)`.
pub fn truncate_y(f: &GeneratorSpec, k: f64) -> Result<GeneratorSpec> {
    ensure(k > 0.0, || "truncation level must be positive".into())?;
    let drv = f.driver().clone();
    let mut out = GeneratorSpec::new(
        format!("{}^K", f.name),
        f.beta,
        Arc::new(move |t, x, y, z| drv(t, x, y.clamp(-k, k), z)),
    )
    .y_independent(f.y_independent);
    out.h2 = f.h2.clone();
    if let Some(h1) = &f.h1 {
        let scale = 1.0 + h1.b * k;
        let alpha_bar = match &h1.alpha_bar {
            AlphaBar::Constant(r) => AlphaBar::Constant(r * scale),
            AlphaBar::Field(fld) => {
                let fld = fld.clone();
                AlphaBar::Field(Arc::new(move |t, x| fld(t, x) * scale))
            }
        };
        out.h1 = Some(H1Certificate {
            alpha_bar,
            a: h1.a * scale,
            b: 0.0,
            variant: H1Variant::H1Prime,
            c1: 0.0,
            ..h1.clone()
        });
    }
    Ok(out)
}

/// `G(s, u, v) = beta rho_{c2}(u) F(s, ln(u v c1)/beta, v/(beta (u v c1))) - |m v|^2 / (2 (u v c1))`.
///
/// `G` agrees with the transformed driver on `[c1, c2]` and carries the
/// certificate `(|beta| alpha_bar, b = 1, gamma_hat)`.
pub fn truncate_u(
    f: &GeneratorSpec,
    beta: f64,
    terminal: &Terminal,
    model: &MarketModel,
    c: TruncationConstants,
) -> Result<Eq2Problem> {
    check_beta(beta)?;
    ensure(c.c1 > 0.0 && c.c1 <= c.c2, || format!("need 0 < c1 <= c2, got c1 = {}, c2 = {}", c.c1, c.c2))?;
    let (drv, mm) = (f.driver().clone(), model.clone());
    let (c1, c2) = (c.c1, c.c2);
    let g: DriverFn = Arc::new(move |t, x, u, v| {
        let uc = u.max(c1);
        let m = mm.vol(t, x);
        let mv2 = linalg::norm_sq(&linalg::mat_vec(&m, v));
        let rho = u.clamp(-c2, c2);
        let head = if rho == 0.0 {
            0.0
        } else {
            let z: Point = v.iter().map(|vi| vi / (beta * uc)).collect();
            beta * rho * drv(t, x, uc.ln() / beta, &z)
        };
        head - mv2 / (2.0 * uc)
    });
    let mut out = Eq2Problem::new(format!("G({})", f.name), g, exp_terminal(terminal, beta));
    if let Some(h1) = &f.h1 {
        let bb = beta.abs();
        let alpha_bar = match &h1.alpha_bar {
            AlphaBar::Constant(r) => AlphaBar::Constant(r * bb),
            AlphaBar::Field(fld) => {
                let fld = fld.clone();
                AlphaBar::Field(Arc::new(move |t, x| fld(t, x) * bb))
            }
        };
        out.h1 = Some(H1Certificate {
            alpha_bar,
            a: h1.a * bb,
            b: 1.0,
            gamma: gamma_hat(h1.gamma, beta, c),
            beta: 0.0,
            variant: H1Variant::H1,
            c1: 0.0,
            horizon: h1.horizon,
        });
    }
    Ok(out)
}

/// `gamma c2 / (|beta| c1^2) + 1 / c1`.
pub fn gamma_hat(gamma: f64, beta: f64, c: TruncationConstants) -> f64 {
    gamma * c.c2 / (beta.abs() * c.c1 * c.c1) + 1.0 / c.c1
}

/// Tensor grid of `(u', v')` points for the inf-convolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionGrid {
    pub u: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

impl ConvolutionGrid {
    pub fn uniform(u: (f64, f64), v: &[(f64, f64)], points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::EmptyGrid);
        }
        ensure(u.0 <= u.1 && v.iter().all(|r| r.0 <= r.1), || "grid ranges must be ordered".into())?;
        Ok(Self { u: linspace(u.0, u.1, points), v: v.iter().map(|r| linspace(r.0, r.1, points)).collect() })
    }

    /// 101 points per axis over `[c1, c2] x [-v_max, v_max]^d`.
    pub fn default_for(c: TruncationConstants, v_max: f64, dim: usize) -> Self {
        Self::uniform((c.c1, c.c2), &vec![(-v_max, v_max); dim], 101).expect("valid ranges")
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn len(&self) -> usize {
        self.u.len() * self.v.iter().map(Vec::len).product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points `(u, v)`.
    pub fn points(&self) -> Vec<(f64, Point)> {
        let mut out = Vec::with_capacity(self.len());
        let d = self.dim();
        let mut idx = vec![0usize; d];
        for &u in &self.u {
            idx.iter_mut().for_each(|i| *i = 0);
            loop {
                out.push((u, idx.iter().enumerate().map(|(c, &i)| self.v[c][i]).collect()));
                let mut c = 0;
                while c < d {
                    idx[c] += 1;
                    if idx[c] < self.v[c].len() {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                }
                if c == d {
                    break;
                }
            }
        }
        out
    }
}

/// One-dimensional L1 distance transform on a sorted axis:
/// `out[k] = min_j f[j] + w |x_k - x_j|`.
fn distance_transform(xs: &[f64], f: &mut [f64], w: f64) {
    for k in 1..f.len() {
        let cand = f[k - 1] + w * (xs[k] - xs[k - 1]);
        if cand < f[k] {
            f[k] = cand;
        }
    }
    for k in (0..f.len().saturating_sub(1)).rev() {
        let cand = f[k + 1] + w * (xs[k + 1] - xs[k]);
        if cand < f[k] {
            f[k] = cand;
        }
    }
}

/// Cell corners bracketing `q` on a sorted axis (clamped outside).
fn bracket(xs: &[f64], q: f64) -> [usize; 2] {
    let k = xs.partition_point(|x| *x <= q);
    if k == 0 {
        [0, 0]
    } else if k == xs.len() {
        [xs.len() - 1, xs.len() - 1]
    } else {
        [k - 1, k]
    }
}

/// Precomputed inf-convolution of a homogeneous driver for `d = 1`.
struct ConvTable {
    u: Option<Vec<f64>>,
    v: Vec<f64>,
    /// `[iu * nv + iv]`
    table: Vec<f64>,
    wu: f64,
    wv: f64,
}

impl ConvTable {
    fn build(g: &DriverFn, grid: &ConvolutionGrid, n: f64, m_abs: f64, depends_on_u: bool) -> Self {
        let v = grid.v[0].clone();
        let us = if depends_on_u { Some(grid.u.clone()) } else { None };
        let u_axis = us.clone().unwrap_or_else(|| vec![0.0]);
        let nv = v.len();
        let wv = n * m_abs;
        let mut table = vec![0.0; u_axis.len() * nv];
        for (iu, &u) in u_axis.iter().enumerate() {
            let row = &mut table[iu * nv..(iu + 1) * nv];
            for (iv, &vv) in v.iter().enumerate() {
                row[iv] = g(0.0, &[0.0], u, &[vv]);
            }
            distance_transform(&v, row, wv);
        }
        if u_axis.len() > 1 {
            let mut col = vec![0.0; u_axis.len()];
            for iv in 0..nv {
                for iu in 0..u_axis.len() {
                    col[iu] = table[iu * nv + iv];
                }
                distance_transform(&u_axis, &mut col, n);
                for iu in 0..u_axis.len() {
                    table[iu * nv + iv] = col[iu];
                }
            }
        }
        Self { u: us, v, table, wu: n, wv }
    }

    fn eval(&self, u: f64, v: f64) -> f64 {
        let nv = self.v.len();
        let bv = bracket(&self.v, v);
        let mut best = f64::INFINITY;
        match &self.u {
            Some(us) => {
                for iu in bracket(us, u) {
                    for iv in bv {
                        let c = self.table[iu * nv + iv] + self.wu * (u - us[iu]).abs() + self.wv * (v - self.v[iv]).abs();
                        best = best.min(c);
                    }
                }
            }
            None => {
                for iv in bv {
                    best = best.min(self.table[iv] + self.wv * (v - self.v[iv]).abs());
                }
            }
        }
        best
    }
}

fn convolve_driver(
    g: DriverFn,
    model: &MarketModel,
    n: f64,
    grid: &ConvolutionGrid,
    homogeneous: bool,
    depends_on_u: bool,
) -> DriverFn {
    if homogeneous && grid.dim() == 1 {
        if let Some((m, _)) = model.constant_coefficients() {
            let table = ConvTable::build(&g, grid, n, m[(0, 0)].abs(), depends_on_u);
            return Arc::new(move |t, x, u, v| table.eval(u, v[0]).min(g(t, x, u, v)));
        }
    }
    let points = Arc::new(grid.points());
    let mm = model.clone();
    Arc::new(move |t, x, u, v| {
        let m = mm.vol(t, x);
        let mut best = g(t, x, u, v);
        for (up, vp) in points.iter() {
            let u_eval = if depends_on_u { *up } else { u };
            let du = if depends_on_u { (u - up).abs() } else { 0.0 };
            let c = g(t, x, u_eval, vp) + n * (linalg::weighted_norm(&m, &linalg::sub(v, vp)) + du);
            if c < best {
                best = c;
            }
        }
        best
    })
}

/// `g^n(s, u, v) = min over the grid and the query point of
/// g(s, u', v') + n |m (v - v')| + n |u - u'|`.
pub fn inf_convolve(g: &Eq2Problem, model: &MarketModel, n: f64, grid: &ConvolutionGrid) -> Result<Eq2Problem> {
    ensure(n > 0.0, || "inf-convolution level must be positive".into())?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.dim() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: grid.dim(), context: "convolution grid" });
    }
    let driver = convolve_driver(g.g.clone(), model, n, grid, g.homogeneous, g.depends_on_u);
    let mut out = g.clone();
    out.g = driver;
    out.lipschitz_n = Some(n);
    out.name = format!("{}^{n}", g.name);
    Ok(out)
}

/// `g^{n,p} = (g+)^n - (g-)^p`.
pub fn inf_convolve_two_sided(
    g: &Eq2Problem,
    model: &MarketModel,
    n: f64,
    p: f64,
    grid: &ConvolutionGrid,
) -> Result<Eq2Problem> {
    ensure(n > 0.0 && p > 0.0, || "inf-convolution levels must be positive".into())?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (gp, gm) = (g.g.clone(), g.g.clone());
    let plus: DriverFn = Arc::new(move |t, x, u, v| gp(t, x, u, v).max(0.0));
    let minus: DriverFn = Arc::new(move |t, x, u, v| (-gm(t, x, u, v)).max(0.0));
    let a = convolve_driver(plus, model, n, grid, g.homogeneous, g.depends_on_u);
    let b = convolve_driver(minus, model, p, grid, g.homogeneous, g.depends_on_u);
    let mut out = g.clone();
    out.g = Arc::new(move |t, x, u, v| a(t, x, u, v) - b(t, x, u, v));
    out.lipschitz_n = Some(n.max(p));
    out.name = format!("{}^({n},{p})", g.name);
    Ok(out)
}

/// Audits `|g(u1, v1) - g(u2, v2)| <= n (|m (v1 - v2)| + |u1 - u2|)` on
/// `samples` Halton pairs spanning the grid box, at `t = 0`, `W = 0`.
pub fn lipschitz_audit(g: &Eq2Problem, model: &MarketModel, grid: &ConvolutionGrid, samples: usize) -> Result<CertificateReport> {
    let n = g.lipschitz_n.ok_or(Error::MissingCertificate("Lipschitz constant"))?;
    let d = model.dim();
    let mut ranges = vec![(grid.u[0], *grid.u.last().expect("non-empty"))];
    for axis in &grid.v {
        ranges.push((axis[0], *axis.last().expect("non-empty")));
    }
    let doubled: Vec<(f64, f64)> = ranges.iter().chain(ranges.iter()).copied().collect();
    let x = linalg::zeros(d);
    let m = model.vol(0.0, &x);
    let mut worst = f64::INFINITY;
    let mut worst_norm = f64::INFINITY;
    let mut point = Vec::new();
    for p in halton::box_points(&doubled, samples) {
        let (u1, v1) = (p[0], &p[1..1 + d]);
        let (u2, v2) = (p[1 + d], &p[2 + d..]);
        let lhs = (g.eval(0.0, &x, u1, v1) - g.eval(0.0, &x, u2, v2)).abs();
        let rhs = n * (linalg::weighted_norm(&m, &linalg::sub(v1, v2)) + (u1 - u2).abs());
        let slack = rhs - lhs;
        let norm = slack / (1.0 + rhs);
        if norm < worst_norm {
            worst_norm = norm;
            worst = slack;
            point = p.clone();
        }
    }
    Ok(CertificateReport { pass: worst_norm >= -1e-10, worst_slack: worst, n_samples: samples, worst_point: point })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use crate::generators::make_exponential_generator;

    fn zero_driver() -> GeneratorSpec {
        GeneratorSpec::new("zero", 1.0, Arc::new(|_, _, _, _| 0.0))
    }

    fn unit_model() -> MarketModel {
        MarketModel::black_scholes(0.05, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn to_eq2_examples() {
        let model = MarketModel::black_scholes(0.1, 0.02, 0.3, 1.0).unwrap();
        let f = make_exponential_generator(&model, &ConstraintSet::full_space(1), 2.0).unwrap();
        let g = to_eq2(&f, 2.0, &Terminal::zero(), &model).unwrap();
        assert!((g.eval(0.0, &[0.0], 1.0, &[0.0]) - 2.0 * f.eval(0.0, &[0.0], 0.0, &[0.0])).abs() < 1e-15);
        assert_eq!(g.eval(0.0, &[0.0], 0.0, &[1.0]), 0.0);
        assert_eq!(g.eval(0.0, &[0.0], -2.0, &[1.0]), 0.0);
        let g0 = to_eq2(&zero_driver(), 1.0, &Terminal::zero(), &unit_model()).unwrap();
        for (u, v) in [(0.5, 1.0), (2.0, -3.0), (0.1, 0.2)] {
            assert!((g0.eval(0.0, &[0.0], u, &[v]) + v * v / (2.0 * u)).abs() < 1e-14);
        }
        assert!(to_eq2(&f, 0.0, &Terminal::zero(), &model).is_err());
    }

    #[test]
    fn from_eq2_examples() {
        let (y, z) = from_eq2_values(1.0, &[0.0], 2.0).unwrap();
        assert_eq!((y, z[0]), (0.0, 0.0));
        let (y, _) = from_eq2_values((1.5f64 * 0.7).exp(), &[0.0], 1.5).unwrap();
        assert!((y - 0.7).abs() < 1e-15);
        assert!(from_eq2_values(0.0, &[0.0], 1.0).is_err());
    }

    #[test]
    fn truncation_examples() {
        let c = truncation_constants(0.0, 1.0, 0.0);
        assert_eq!((c.c1, c.c2), (1.0, 1.0));
        let c = truncation_constants(1.0, 1.0, 0.0);
        assert!((c.c2 - (2.0 * std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((c.c1 - (-1.0f64).exp()).abs() < 1e-15);
        assert!((c.c2 - 4.436564).abs() < 1e-6);
    }

    #[test]
    fn truncate_u_at_zero() {
        let model = unit_model();
        let c = truncation_constants(0.5, 1.0, 1.0);
        let g = truncate_u(&zero_driver(), 1.0, &Terminal::zero(), &model, c).unwrap();
        assert!((g.eval(0.0, &[0.0], 0.0, &[2.0]) + 4.0 / (2.0 * c.c1)).abs() < 1e-14);
        let raw = to_eq2(&zero_driver(), 1.0, &Terminal::zero(), &model).unwrap();
        let u = 0.5 * (c.c1 + c.c2);
        assert_eq!(g.eval(0.0, &[0.0], u, &[0.7]), raw.eval(0.0, &[0.0], u, &[0.7]));
    }

    #[test]
    fn huber_from_quadratic() {
        let model = unit_model();
        let g = Eq2Problem::new("q", Arc::new(|_, _, _, v: &[f64]| 0.5 * v[0] * v[0]), Terminal::zero()).homogeneous(false);
        let grid = ConvolutionGrid::uniform((0.0, 1.0), &[(-10.0, 10.0)], 2001).unwrap();
        let g2 = inf_convolve(&g, &model, 2.0, &grid).unwrap();
        for v in [-9.0f64, -2.5, -1.0, 0.0, 0.3, 2.0, 5.0] {
            let huber = if v.abs() <= 2.0 { 0.5 * v * v } else { 2.0 * v.abs() - 2.0 };
            assert!((g2.eval(0.0, &[0.0], 0.5, &[v]) - huber).abs() < 1e-12, "v={v}");
        }
        assert!(lipschitz_audit(&g2, &model, &grid, 2000).unwrap().pass);
    }

    #[test]
    fn empty_grid_rejected() {
        assert_eq!(ConvolutionGrid::uniform((0.0, 1.0), &[(0.0, 1.0)], 0), Err(Error::EmptyGrid));
    }
}
