//! Utility maximisation under portfolio constraints: value functions, optimal
//! strategies, wealth simulation and the martingale test of the dynamic
//! programming principle.
//!
//! Wealth dynamics, with `nu` an amount vector and `rho` a proportion vector:
//!
//! ```text
//! dX = (m nu)'dW + (m nu)'(m lambda) dt                     (exponential)
//! X_{k+1} = X_k exp((m rho)'(m lambda) dt - |m rho|^2 dt / 2 + (m rho)'dW)   (power, log)
//! ```

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, MEMBERSHIP_TOL};
use crate::error::{ensure, Error, Result};
use crate::generators::{make_exponential_generator, make_log_generator, make_power_generator, GeneratorSpec};
use crate::linalg::{self, Point};
use crate::market::{MarketModel, PathBundle};
use crate::quadrature::gaussian_expectation;
use crate::solver::{BSDEProblem, DiscreteSolution};
use crate::terminal::{Terminal, TerminalSpec};

/// Number of batches behind the Monte Carlo error bands.
pub const N_BATCHES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityKind {
    Exponential { alpha: f64 },
    Power { gamma_u: f64 },
    Log {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub liability: TerminalSpec,
    pub x: f64,
}

impl UtilitySpec {
    pub fn exponential(alpha: f64, x: f64) -> Self {
        Self { kind: UtilityKind::Exponential { alpha }, liability: TerminalSpec::Zero {}, x }
    }

    pub fn power(gamma_u: f64, x: f64) -> Self {
        Self { kind: UtilityKind::Power { gamma_u }, liability: TerminalSpec::Zero {}, x }
    }

    pub fn log(x: f64) -> Self {
        Self { kind: UtilityKind::Log {}, liability: TerminalSpec::Zero {}, x }
    }

    pub fn with_liability(mut self, liability: TerminalSpec) -> Self {
        self.liability = liability;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            UtilityKind::Exponential { alpha } => {
                ensure(alpha.is_finite() && alpha > 0.0, || format!("alpha must be positive, got {alpha}"))?;
                ensure(self.x.is_finite(), || "initial wealth must be finite".into())
            }
            UtilityKind::Power { gamma_u } => {
                ensure(gamma_u > 0.0 && gamma_u < 1.0, || format!("gamma_u must lie in (0, 1), got {gamma_u}"))?;
                self.check_positive_wealth()
            }
            UtilityKind::Log {} => self.check_positive_wealth(),
        }
    }

    fn check_positive_wealth(&self) -> Result<()> {
        ensure(self.x.is_finite() && self.x > 0.0, || format!("initial wealth must be positive, got {}", self.x))?;
        ensure(self.liability.is_zero(), || "power and log utilities take no liability".into())
    }

    /// Exponent of the change of variable `U = exp(beta Y)`.
    pub fn beta(&self) -> f64 {
        match self.kind {
            UtilityKind::Exponential { alpha } => alpha,
            UtilityKind::Power { .. } => 0.5,
            UtilityKind::Log {} => 0.0,
        }
    }

    /// The driver of the BSDE whose solution gives the value function.
    pub fn generator(&self, model: &MarketModel, set: &ConstraintSet) -> Result<GeneratorSpec> {
        self.validate()?;
        match self.kind {
            UtilityKind::Exponential { alpha } => make_exponential_generator(model, set, alpha),
            UtilityKind::Power { gamma_u } => Ok(make_power_generator(model, set, gamma_u)?.negated()),
            UtilityKind::Log {} => Ok(make_log_generator(model, set)?.negated()),
        }
    }

    pub fn terminal(&self, dim: usize) -> Result<Terminal> {
        Terminal::from_spec(&self.liability, dim)
    }

    pub fn problem(&self, model: &MarketModel, set: &ConstraintSet, n_steps: usize) -> Result<BSDEProblem> {
        let f = self.generator(model, set)?;
        Ok(BSDEProblem::eq1(model.clone(), f, self.terminal(model.dim())?, n_steps))
    }

    /// Value function at wealth `x` given the BSDE value `y`.
    pub fn compose(&self, x: f64, y: f64) -> Result<f64> {
        match self.kind {
            UtilityKind::Exponential { alpha } => Ok(-(-alpha * (x - y)).exp()),
            UtilityKind::Power { gamma_u } => {
                ensure(x > 0.0, || format!("power utility needs positive wealth, got {x}"))?;
                Ok(x.powf(gamma_u) / gamma_u * y.exp())
            }
            UtilityKind::Log {} => {
                ensure(x > 0.0, || format!("log utility needs positive wealth, got {x}"))?;
                Ok(x.ln() + y)
            }
        }
    }

    /// The R-process `U(X - Y)` (exponential) or its power/log analogue.
    fn r_value(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            UtilityKind::Exponential { alpha } => -(-alpha * (x - y)).exp(),
            UtilityKind::Power { gamma_u } => x.powf(gamma_u) / gamma_u * y.exp(),
            UtilityKind::Log {} => x.ln() + y,
        }
    }

    pub fn units(&self) -> StrategyUnits {
        match self.kind {
            UtilityKind::Exponential { .. } => StrategyUnits::Amounts,
            _ => StrategyUnits::Proportions,
        }
    }

    /// Unprojected optimiser: `Z + lambda/alpha`, `(Z + lambda)/(1 - g)` or `lambda`.
    fn target(&self, z: &[f64], lambda: &[f64]) -> Point {
        match self.kind {
            UtilityKind::Exponential { alpha } => z.iter().zip(lambda).map(|(zi, li)| zi + li / alpha).collect(),
            UtilityKind::Power { gamma_u } => {
                z.iter().zip(lambda).map(|(zi, li)| (zi + li) / (1.0 - gamma_u)).collect()
            }
            UtilityKind::Log {} => linalg::point(lambda),
        }
    }
}

/// `V_0(x)` at `t = 0` from a solved BSDE.
pub fn value_function(u: &UtilitySpec, sol: &DiscreteSolution) -> Result<f64> {
    u.compose(u.x, sol.y0)
}

/// `V_t(x)` at grid step `step`, one entry per lattice node (or stored path).
pub fn value_surface(u: &UtilitySpec, sol: &DiscreteSolution, step: usize, x: f64) -> Result<Vec<f64>> {
    ensure(step <= sol.n_steps(), || format!("step {step} beyond the grid"))?;
    let ys: Vec<f64> = sol.y_values().filter(|(i, _)| *i == step).map(|(_, y)| y).collect();
    ys.into_iter().map(|y| u.compose(x, y)).collect()
}

/// Solves the utility BSDE on the given backend settings and returns `(V_0, solution)`.
pub fn solve_value(
    u: &UtilitySpec,
    model: &MarketModel,
    set: &ConstraintSet,
    template: impl FnOnce(BSDEProblem) -> BSDEProblem,
    n_steps: usize,
) -> Result<(f64, DiscreteSolution)> {
    let problem = template(u.problem(model, set, n_steps)?);
    let sol = crate::solver::solve(&problem)?;
    Ok((value_function(u, &sol)?, sol))
}

/// Closed-form `Y_0` when one is available: constant coefficients with no
/// liability (then `Z = 0` and the driver is constant), or the unconstrained
/// exponential case in `d = 1` with a liability, where
/// `Y_0 = E^Q[B] - |m lambda|^2 T / (2 alpha)` and `W_T ~ N(-m lambda T, T)` under `Q`.
pub fn closed_form_y0(u: &UtilitySpec, model: &MarketModel, set: &ConstraintSet) -> Result<Option<f64>> {
    let Some((m, lambda)) = model.constant_coefficients() else {
        return Ok(None);
    };
    let t = model.horizon();
    let d = model.dim();
    if u.liability.is_zero() {
        let f = u.generator(model, set)?;
        return Ok(Some(t * f.eval(0.0, &linalg::zeros(d), 0.0, &linalg::zeros(d))));
    }
    match u.kind {
        UtilityKind::Exponential { alpha } if d == 1 && set.is_full_space() => {
            let b = u.terminal(1)?;
            let ml = m[(0, 0)] * lambda[0];
            let eq = gaussian_expectation(|w| b.eval(&[w]), -ml * t, t);
            Ok(Some(eq - ml * ml * t / (2.0 * alpha)))
        }
        _ => Ok(None),
    }
}

/// Unconstrained optimal vector for constant coefficients: `lambda/alpha`,
/// `lambda/(1 - g)` or `lambda`.
pub fn merton_strategy(u: &UtilitySpec, model: &MarketModel) -> Option<Point> {
    let (_, lambda) = model.constant_coefficients()?;
    Some(u.target(&linalg::zeros(model.dim()), lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyUnits {
    Amounts,
    Proportions,
}

/// Feasibility and the checkable admissibility proxy
/// `|m(nu* - target)| <= |m target|`, which gives
/// `|m(nu* - Z)| <= |m(Z + lambda/alpha)| + |m lambda/alpha|` for the exponential case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub n_values: usize,
    pub membership_failures: usize,
    pub proxy_failures: usize,
    /// `max(lhs - rhs)` of the proxy inequality.
    pub worst_proxy_slack: f64,
    pub pass: bool,
}

pub type Policy = Arc<dyn Fn(f64, &[f64]) -> Point + Send + Sync>;

/// A feedback strategy `(t, W_t) -> nu` with its values on the solution grid.
#[derive(Clone)]
pub struct StrategyProcess {
    pub name: String,
    pub units: StrategyUnits,
    pub times: Vec<f64>,
    /// `[step][node]` on the lattice or `[step][stored path]` for regression;
    /// empty for strategies defined only through their policy.
    pub values: Vec<Vec<Point>>,
    pub admissibility: Option<AdmissibilityReport>,
    policy: Policy,
}

impl fmt::Debug for StrategyProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyProcess")
            .field("name", &self.name)
            .field("units", &self.units)
            .field("admissibility", &self.admissibility)
            .finish_non_exhaustive()
    }
}

impl StrategyProcess {
    pub fn from_policy(name: impl Into<String>, units: StrategyUnits, policy: Policy) -> Self {
        Self { name: name.into(), units, times: Vec::new(), values: Vec::new(), admissibility: None, policy }
    }

    pub fn constant(value: &[f64], units: StrategyUnits) -> Self {
        let v = linalg::point(value);
        Self::from_policy(format!("constant{:?}", value), units, Arc::new(move |_, _| v.clone()))
    }

    pub fn at(&self, t: f64, w: &[f64]) -> Point {
        (self.policy)(t, w)
    }

    /// `proj_C(nu(t, W) + shift(t))`.
    pub fn perturbed(
        &self,
        name: impl Into<String>,
        shift: impl Fn(f64) -> Point + Send + Sync + 'static,
        set: &ConstraintSet,
        model: &MarketModel,
    ) -> Self {
        let (base, s, mm) = (self.policy.clone(), set.clone(), model.clone());
        let policy: Policy = Arc::new(move |t, w| {
            let v = linalg::add(&base(t, w), &shift(t));
            s.project_unchecked(&v, &mm.vol(t, w))
        });
        Self::from_policy(name, self.units, policy)
    }
}

/// Projects the utility-specific target nodewise.
pub fn optimal_strategy(
    u: &UtilitySpec,
    sol: &DiscreteSolution,
    model: &MarketModel,
    set: &ConstraintSet,
) -> Result<StrategyProcess> {
    u.validate()?;
    if set.dim() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: set.dim(), context: "constraint set" });
    }
    let n = sol.n_steps();
    let dt = sol.dt();
    let d = model.dim();
    let sol_arc = Arc::new(sol.clone());
    let (uu, s, mm) = (u.clone(), set.clone(), model.clone());
    let policy: Policy = Arc::new(move |t, w| {
        let step = ((t / dt + 1e-9).floor() as usize).min(n - 1);
        let z = sol_arc.z_at(step, w);
        let target = uu.target(&z, &mm.premium(t, w));
        s.project_unchecked(&target, &mm.vol(t, w))
    });

    let mut values = Vec::with_capacity(n);
    let mut report = AdmissibilityReport {
        n_values: 0,
        membership_failures: 0,
        proxy_failures: 0,
        worst_proxy_slack: f64::NEG_INFINITY,
        pass: true,
    };
    for step in 0..n {
        let t = sol.times[step];
        let nodes = grid_states(sol, step, d);
        let row: Vec<(Point, bool, f64)> = nodes
            .par_iter()
            .map(|w| -> Result<(Point, bool, f64)> {
                let z = sol.z_at(step, w);
                let m = model.vol(t, w);
                let target = u.target(&z, &model.premium(t, w));
                let v = set.project(&target, &m)?;
                let member = set.contains(&v, MEMBERSHIP_TOL);
                let lhs = linalg::weighted_norm(&m, &linalg::sub(&v, &target));
                let rhs = linalg::weighted_norm(&m, &target);
                Ok((v, member, lhs - rhs))
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(row.len());
        for (v, member, slack) in row {
            report.n_values += 1;
            report.membership_failures += usize::from(!member);
            report.proxy_failures += usize::from(slack > 1e-9 * (1.0 + linalg::norm(&v)));
            report.worst_proxy_slack = report.worst_proxy_slack.max(slack);
            out.push(v);
        }
        values.push(out);
    }
    report.pass = report.membership_failures == 0 && report.proxy_failures == 0;
    Ok(StrategyProcess {
        name: "optimal".into(),
        units: u.units(),
        times: sol.times[..n].to_vec(),
        values,
        admissibility: Some(report),
        policy,
    })
}

/// Brownian states at which the solution stores values at `step`.
fn grid_states(sol: &DiscreteSolution, step: usize, d: usize) -> Vec<Point> {
    if let Some(l) = &sol.lattice {
        return (0..=step).map(|j| linalg::point(&[l.node_state(step, j)])).collect();
    }
    let r = sol.regression.as_ref().expect("solution carries data");
    r.sample_w[step].chunks(d).map(linalg::point).collect()
}

/// Wealth on every path of `bundle` from grid step `start` with `X = x`.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPaths {
    pub n_paths: usize,
    pub start_step: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// `[path][k - start_step]`.
    values: Vec<f64>,
}

impl WealthPaths {
    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.n_steps + 1 - self.start_step;
        &self.values[p * len..(p + 1) * len]
    }

    pub fn terminal(&self, p: usize) -> f64 {
        *self.path(p).last().expect("non-empty path")
    }
}

fn wealth_step(units: StrategyUnits, x: f64, v: &[f64], m: &nalgebra::DMatrix<f64>, lambda: &[f64], inc: &[f64], dt: f64) -> f64 {
    let mv = linalg::mat_vec(m, v);
    let ml = linalg::mat_vec(m, lambda);
    // dM = m'dW, so v'dM = (m v)'dW.
    let dm = linalg::dot(&mv, inc);
    match units {
        StrategyUnits::Amounts => x + dm + linalg::dot(&mv, &ml) * dt,
        StrategyUnits::Proportions => x * (linalg::dot(&mv, &ml) * dt - 0.5 * linalg::norm_sq(&mv) * dt + dm).exp(),
    }
}

/// Runs one path from `start` and records `(X, W)` at the requested steps.
fn run_path(
    strategy: &StrategyProcess,
    bundle: &PathBundle,
    model: &MarketModel,
    p: usize,
    x: f64,
    start: usize,
    mut record: impl FnMut(usize, f64, &[f64]),
) {
    let d = bundle.dim;
    let mut w = linalg::zeros(d);
    for k in 0..start {
        w = linalg::add(&w, bundle.increment(p, k));
    }
    let mut xk = x;
    record(start, xk, &w);
    for k in start..bundle.n_steps {
        let t = bundle.time(k);
        let v = strategy.at(t, &w);
        let inc = bundle.increment(p, k);
        xk = wealth_step(strategy.units, xk, &v, &model.vol(t, &w), &model.premium(t, &w), inc, bundle.dt);
        w = linalg::add(&w, inc);
        record(k + 1, xk, &w);
    }
}

pub fn simulate_wealth(
    strategy: &StrategyProcess,
    bundle: &PathBundle,
    model: &MarketModel,
    x: f64,
    start_step: usize,
) -> Result<WealthPaths> {
    ensure(start_step <= bundle.n_steps, || "start step beyond the path grid".into())?;
    if strategy.units == StrategyUnits::Proportions {
        ensure(x > 0.0, || format!("proportional strategies need positive wealth, got {x}"))?;
    }
    let len = bundle.n_steps + 1 - start_step;
    let mut values = vec![0.0; bundle.n_paths * len];
    values.par_chunks_mut(len).enumerate().for_each(|(p, row)| {
        run_path(strategy, bundle, model, p, x, start_step, |k, xk, _| row[k - start_step] = xk);
    });
    Ok(WealthPaths { n_paths: bundle.n_paths, start_step, n_steps: bundle.n_steps, dt: bundle.dt, values })
}

/// Mean and batch-means standard error of `samples`.
pub fn batch_mean(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let nb = N_BATCHES.min(n);
    let means: Vec<f64> = (0..nb)
        .map(|b| {
            let s = &samples[b * n / nb..(b + 1) * n / nb];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    let mean = means.iter().sum::<f64>() / nb as f64;
    if nb < 2 {
        return (mean, 0.0);
    }
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nb - 1) as f64;
    (mean, (var / nb as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleKind {
    Martingale,
    Supermartingale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RCheck {
    pub strategy: String,
    pub kind: MartingaleKind,
    pub tau: f64,
    pub sigma: f64,
    /// `E[R_sigma - R_tau]`.
    pub mean_increment: f64,
    /// Three batch-means standard errors.
    pub band: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RReport {
    pub r0: f64,
    pub n_paths: usize,
    pub checks: Vec<RCheck>,
    pub pass: bool,
}

/// `Y` at time `t` and state `w`, linear in time between grid steps.
fn y_at_time(sol: &DiscreteSolution, t: f64, w: &[f64]) -> f64 {
    let n = sol.n_steps();
    let s = t / sol.dt();
    let i = (s + 1e-9).floor() as usize;
    if i >= n {
        return sol.terminal().eval(w);
    }
    let frac = s - i as f64;
    if frac < 1e-9 {
        return sol.y_at(i, w);
    }
    sol.y_at(i, w) * (1.0 - frac) + sol.y_at(i + 1, w) * frac
}

/// Tests `E[R_sigma] = E[R_tau]` for `optimal` and `E[R_sigma] <= E[R_tau]`
/// for every strategy in `perturbed`, over the `(tau, sigma)` pairs given as
/// bundle step indices.
pub fn verify_r_process(
    u: &UtilitySpec,
    optimal: &StrategyProcess,
    perturbed: &[StrategyProcess],
    sol: &DiscreteSolution,
    bundle: &PathBundle,
    model: &MarketModel,
    pairs: &[(usize, usize)],
) -> Result<RReport> {
    u.validate()?;
    ensure(!pairs.is_empty(), || "at least one (tau, sigma) pair is needed".into())?;
    ensure(pairs.iter().all(|(a, b)| a < b && *b <= bundle.n_steps), || "pairs must satisfy tau < sigma <= N".into())?;
    ensure((bundle.dt * bundle.n_steps as f64 - sol.times[sol.n_steps()]).abs() < 1e-9, || {
        "path bundle and solution horizons differ".into()
    })?;
    let r0 = u.r_value(u.x, sol.y0);
    let mut steps: Vec<usize> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    steps.sort_unstable();
    steps.dedup();
    let mut checks = Vec::new();
    let strategies = std::iter::once((optimal, MartingaleKind::Martingale))
        .chain(perturbed.iter().map(|s| (s, MartingaleKind::Supermartingale)));
    for (strategy, kind) in strategies {
        // [path][checkpoint]
        let rs: Vec<Vec<f64>> = (0..bundle.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut out = vec![0.0; steps.len()];
                run_path(strategy, bundle, model, p, u.x, 0, |k, xk, w| {
                    if let Ok(slot) = steps.binary_search(&k) {
                        out[slot] = if k == 0 { r0 } else { u.r_value(xk, y_at_time(sol, bundle.time(k), w)) };
                    }
                });
                out
            })
            .collect();
        for &(a, b) in pairs {
            let (ia, ib) = (steps.binary_search(&a).expect("recorded"), steps.binary_search(&b).expect("recorded"));
            let diffs: Vec<f64> = rs.iter().map(|r| r[ib] - r[ia]).collect();
            let (mean, se) = batch_mean(&diffs);
            let band = 3.0 * se;
            let floor = 1e-12 * (1.0 + r0.abs());
            let pass = match kind {
                MartingaleKind::Martingale => mean.abs() <= band + floor,
                MartingaleKind::Supermartingale => mean <= band + floor,
            };
            checks.push(RCheck {
                strategy: strategy.name.clone(),
                kind,
                tau: bundle.time(a),
                sigma: bundle.time(b),
                mean_increment: mean,
                band,
                pass,
            });
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(RReport { r0, n_paths: bundle.n_paths, checks, pass })
}

/// Constant shifts `+-delta e_c` and the two time-bucketed shifts
/// (`+delta` before `T/2`, `-delta` after, and the reverse) along every
/// coordinate, each projected back into the constraint set.
pub fn perturbation_family(
    optimal: &StrategyProcess,
    set: &ConstraintSet,
    model: &MarketModel,
    delta: f64,
) -> Vec<StrategyProcess> {
    let d = model.dim();
    let half = 0.5 * model.horizon();
    let mut out = Vec::new();
    for c in 0..d {
        let e = |s: f64| {
            let mut v = linalg::zeros(d);
            v[c] = s;
            v
        };
        for sign in [1.0, -1.0] {
            let v = e(sign * delta);
            out.push(optimal.perturbed(format!("shift[{c}]={}", sign * delta), move |_| v.clone(), set, model));
            let (early, late) = (e(sign * delta), e(-sign * delta));
            out.push(optimal.perturbed(
                format!("bucket[{c}]={}", sign * delta),
                move |t| if t < half { early.clone() } else { late.clone() },
                set,
                model,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::simulate_paths;

    fn bs() -> MarketModel {
        MarketModel::black_scholes(0.1, 0.02, 0.3, 1.0).unwrap()
    }

    #[test]
    fn validation() {
        assert!(UtilitySpec::exponential(-1.0, 0.0).validate().is_err());
        assert!(UtilitySpec::power(1.0, 1.0).validate().is_err());
        assert!(UtilitySpec::log(0.0).validate().is_err());
        let with_b = UtilitySpec::log(1.0).with_liability(TerminalSpec::Constant { value: 1.0 });
        assert!(with_b.validate().is_err());
        assert!(UtilitySpec::exponential(1.0, -3.0).with_liability(TerminalSpec::Constant { value: 1.0 }).validate().is_ok());
    }

    #[test]
    fn scale_identities() {
        let e = UtilitySpec::exponential(2.0, 0.0);
        let (y, h) = (0.3, 0.7);
        assert!((e.compose(1.0 + h, y).unwrap() - (-2.0 * h).exp() * e.compose(1.0, y).unwrap()).abs() < 1e-15);
        let p = UtilitySpec::power(0.4, 1.0);
        assert!((p.compose(3.0 * 2.0, y).unwrap() - 3f64.powf(0.4) * p.compose(2.0, y).unwrap()).abs() < 1e-14);
        let l = UtilitySpec::log(1.0);
        assert!((l.compose(3.0 * 2.0, y).unwrap() - (3f64.ln() + l.compose(2.0, y).unwrap())).abs() < 1e-14);
    }

    #[test]
    fn merton_targets() {
        let model = bs();
        let log = merton_strategy(&UtilitySpec::log(1.0), &model).unwrap();
        assert!((log[0] - 0.08 / 0.09).abs() < 1e-15);
        let pow = merton_strategy(&UtilitySpec::power(0.5, 1.0), &model).unwrap();
        assert!((pow[0] - 0.08 / (0.5 * 0.09)).abs() < 1e-14);
    }

    #[test]
    fn closed_forms_without_liability() {
        let model = bs();
        let full = ConstraintSet::full_space(1);
        let ml2 = (0.08f64 / 0.3).powi(2);
        let y = closed_form_y0(&UtilitySpec::log(1.0), &model, &full).unwrap().unwrap();
        assert!((y - 0.5 * ml2).abs() < 1e-15);
        let y = closed_form_y0(&UtilitySpec::power(0.5, 1.0), &model, &full).unwrap().unwrap();
        assert!((y - 0.5 * ml2).abs() < 1e-14);
        let y = closed_form_y0(&UtilitySpec::exponential(2.0, 1.0), &model, &full).unwrap().unwrap();
        assert!((y + ml2 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_strategy_keeps_wealth() {
        let model = bs();
        let bundle = simulate_paths(&model, 50, 10, 3).unwrap();
        for units in [StrategyUnits::Amounts, StrategyUnits::Proportions] {
            let w = simulate_wealth(&StrategyProcess::constant(&[0.0], units), &bundle, &model, 2.5, 0).unwrap();
            assert!((0..50).all(|p| w.path(p).iter().all(|x| *x == 2.5)));
        }
    }

    #[test]
    fn log_wealth_moment() {
        let model = MarketModel::black_scholes(0.0, 0.0, 0.5, 1.0).unwrap();
        let bundle = simulate_paths(&model, 20_000, 4, 9).unwrap();
        let w = simulate_wealth(&StrategyProcess::constant(&[0.8], StrategyUnits::Proportions), &bundle, &model, 1.0, 0)
            .unwrap();
        let logs: Vec<f64> = (0..bundle.n_paths).map(|p| w.terminal(p).ln()).collect();
        let (mean, se) = batch_mean(&logs);
        assert!((mean + 0.5 * 0.16).abs() < 3.0 * se + 1e-12, "{mean} (se {se})");
    }

    #[test]
    fn exponential_wealth_drift() {
        let model = bs();
        let bundle = simulate_paths(&model, 20_000, 5, 4).unwrap();
        let w = simulate_wealth(&StrategyProcess::constant(&[1.5], StrategyUnits::Amounts), &bundle, &model, 1.0, 0)
            .unwrap();
        let xs: Vec<f64> = (0..bundle.n_paths).map(|p| w.terminal(p)).collect();
        let (mean, se) = batch_mean(&xs);
        let exact = 1.0 + 1.5 * 0.3 * (0.08 / 0.3);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact}");
    }

    #[test]
    fn constant_r_process_has_zero_slack() {
        let model = MarketModel::black_scholes(0.02, 0.02, 0.3, 1.0).unwrap();
        let u = UtilitySpec::exponential(1.0, 0.0).with_liability(TerminalSpec::Constant { value: 0.4 });
        let sol = crate::solver::solve(&u.problem(&model, &ConstraintSet::full_space(1), 20).unwrap()).unwrap();
        let bundle = simulate_paths(&model, 300, 4, 1).unwrap();
        let zero = StrategyProcess::constant(&[0.0], StrategyUnits::Amounts);
        let rep = verify_r_process(&u, &zero, &[], &sol, &bundle, &model, &[(0, 4), (0, 2)]).unwrap();
        assert!(rep.pass);
        assert!(rep.checks.iter().all(|c| c.mean_increment == 0.0 && c.band == 0.0));
    }
}
