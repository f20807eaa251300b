//! Backward schemes for both BSDE forms.
//!
//! `Z` is computed explicitly from the next time slice and `Y` implicitly by
//! a damped fixed-point iteration:
//!
//! ```text
//! Z_i = m^{-1} E_i[Y_{i+1} dW_i] / dt
//! Y_i = E_i[Y_{i+1}] + F(t_i, W_i, Y_i, Z_i) dt
//! ```

mod lattice;
mod picard;
mod regression;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{self, Bounds, DriverFn, GeneratorSpec, H1Certificate};
use crate::linalg::{self, Point};
use crate::market::MarketModel;
use crate::terminal::Terminal;
use crate::transform::Eq2Problem;

pub use lattice::solve_lattice;
pub(crate) use lattice::{binomial_row, ln_factorials};
pub use picard::{picard_step, PicardInit, PicardSettings};
pub use regression::{solve_regression, Basis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Lattice,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSettings {
    pub n_paths: usize,
    pub basis_degree: usize,
    pub seed: u64,
    /// Number of leading paths whose values are kept for export.
    pub n_store: usize,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        Self { n_paths: 100_000, basis_degree: 4, seed: 1, n_store: 64 }
    }
}

#[derive(Clone)]
pub enum Form {
    Eq1 { generator: GeneratorSpec, terminal: Terminal },
    Eq2(Eq2Problem),
}

#[derive(Clone)]
pub struct BSDEProblem {
    pub form: Form,
    pub model: MarketModel,
    pub n_steps: usize,
    pub backend: Backend,
    pub picard: PicardSettings,
    pub regression: RegressionSettings,
    pub init: PicardInit,
    /// Clamp `|m Z|` to `sqrt(C' / dt)` when a certificate is available.
    pub clamp_z: bool,
}

impl fmt::Debug for BSDEProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BSDEProblem")
            .field("form", &self.name())
            .field("model", &self.model)
            .field("n_steps", &self.n_steps)
            .field("backend", &self.backend)
            .finish_non_exhaustive()
    }
}

impl BSDEProblem {
    pub fn eq1(model: MarketModel, generator: GeneratorSpec, terminal: Terminal, n_steps: usize) -> Self {
        Self::new(model, Form::Eq1 { generator, terminal }, n_steps)
    }

    pub fn eq2(model: MarketModel, problem: Eq2Problem, n_steps: usize) -> Self {
        Self::new(model, Form::Eq2(problem), n_steps)
    }

    fn new(model: MarketModel, form: Form, n_steps: usize) -> Self {
        Self {
            form,
            model,
            n_steps,
            backend: Backend::Lattice,
            picard: PicardSettings::default(),
            regression: RegressionSettings::default(),
            init: PicardInit::Propagated,
            clamp_z: true,
        }
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_regression(mut self, regression: RegressionSettings) -> Self {
        self.regression = regression;
        self
    }

    pub fn with_init(mut self, init: PicardInit) -> Self {
        self.init = init;
        self
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn name(&self) -> String {
        match &self.form {
            Form::Eq1 { generator, terminal } => format!("eq1[{}; B={}]", generator.name, terminal.label()),
            Form::Eq2(p) => format!("eq2[{}; xi={}]", p.name, p.terminal.label()),
        }
    }

    pub fn driver(&self) -> &DriverFn {
        match &self.form {
            Form::Eq1 { generator, .. } => generator.driver(),
            Form::Eq2(p) => p.driver(),
        }
    }

    pub fn terminal(&self) -> &Terminal {
        match &self.form {
            Form::Eq1 { terminal, .. } => terminal,
            Form::Eq2(p) => &p.terminal,
        }
    }

    pub fn certificate(&self) -> Option<&H1Certificate> {
        match &self.form {
            Form::Eq1 { generator, .. } => generator.h1.as_ref(),
            Form::Eq2(p) => p.h1.as_ref(),
        }
    }

    pub fn has_h2(&self) -> bool {
        match &self.form {
            Form::Eq1 { generator, .. } => generator.h2.is_some(),
            Form::Eq2(p) => p.lipschitz_n.is_some(),
        }
    }

    pub fn y_independent(&self) -> bool {
        match &self.form {
            Form::Eq1 { generator, .. } => generator.y_independent,
            Form::Eq2(p) => !p.depends_on_u,
        }
    }

    pub fn bounds(&self) -> Option<Bounds> {
        self.certificate().map(|h1| generators::apriori_bounds(h1, self.terminal().sup_norm()))
    }

    pub fn energy_constant(&self) -> Option<f64> {
        self.certificate().map(|h1| generators::energy_constant(h1, self.terminal().sup_norm()))
    }

    pub fn dt(&self) -> f64 {
        self.model.horizon() / self.n_steps as f64
    }

    fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        if !(self.picard.tol > 0.0 && self.picard.max_iters >= 1) {
            return Err(Error::InvalidArgument("picard tolerance and iteration cap must be positive".into()));
        }
        if let Some(h1) = self.certificate() {
            h1.validate()?;
        }
        Ok(())
    }
}

/// Solver statistics attached to every solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub picard_iters_max: usize,
    pub bound_violations: usize,
    pub bound_epsilon: f64,
    pub bounds: Option<Bounds>,
    pub z_clamps: usize,
    pub z_max: Option<f64>,
    pub energy_estimate: f64,
    pub energy_constant: Option<f64>,
    pub y_min: f64,
    pub y_max: f64,
    pub n_values: usize,
}

/// Per-node lattice arrays: `y[i]` and `z[i]` have `i + 1` entries, node `j`
/// sitting at `W = (2 j - i) sqrt(dt)`. `z` has `n_steps` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeData {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub sqrt_dt: f64,
}

impl LatticeData {
    pub fn node_state(&self, step: usize, node: usize) -> f64 {
        (2.0 * node as f64 - step as f64) * self.sqrt_dt
    }

    fn interpolate(row: &[f64], step: usize, w: f64, sqrt_dt: f64) -> f64 {
        if step == 0 || row.len() == 1 {
            return row[0];
        }
        let pos = ((w / sqrt_dt + step as f64) * 0.5).clamp(0.0, step as f64);
        let j = (pos.floor() as usize).min(step - 1);
        let frac = pos - j as f64;
        row[j] * (1.0 - frac) + row[j + 1] * frac
    }
}

/// Regression coefficients per step; `y_coef[k]` and `z_coef[k][c]` are in
/// the basis of `W_k / sqrt(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub basis: Basis,
    pub y_coef: Vec<Vec<f64>>,
    pub z_coef: Vec<Vec<Vec<f64>>>,
    /// `[step][path]` values of `Y` for the first stored paths.
    pub sample_y: Vec<Vec<f64>>,
    /// `[step][path * dim + c]` values of `Z` for the first stored paths.
    pub sample_z: Vec<Vec<f64>>,
    /// `[step][path * dim + c]` Brownian states of the stored paths.
    pub sample_w: Vec<Vec<f64>>,
    pub n_paths: usize,
    pub y0_std_err: f64,
}

#[derive(Clone)]
pub struct DiscreteSolution {
    pub times: Vec<f64>,
    pub dim: usize,
    pub backend: Backend,
    pub y0: f64,
    pub z0: Point,
    pub lattice: Option<LatticeData>,
    pub regression: Option<RegressionData>,
    pub diagnostics: Diagnostics,
    /// Unconditional mean of the remaining energy `E int_t^T |m Z|^2 ds` at each grid time.
    pub energy_profile: Vec<f64>,
    terminal: Terminal,
}

impl fmt::Debug for DiscreteSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteSolution")
            .field("n_steps", &(self.times.len() - 1))
            .field("backend", &self.backend)
            .field("y0", &self.y0)
            .field("z0", &self.z0.as_slice())
            .field("diagnostics", &self.diagnostics)
            .finish_non_exhaustive()
    }
}

impl DiscreteSolution {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn terminal(&self) -> &Terminal {
        &self.terminal
    }

    /// `Y` at grid step `step` and Brownian state `w`.
    pub fn y_at(&self, step: usize, w: &[f64]) -> f64 {
        if step >= self.n_steps() {
            return self.terminal.eval(w);
        }
        if let Some(l) = &self.lattice {
            return LatticeData::interpolate(&l.y[step], step, w[0], l.sqrt_dt);
        }
        let r = self.regression.as_ref().expect("solution carries data");
        let phi = r.basis.features(w, self.times[step]);
        linalg::dot(&phi, &r.y_coef[step])
    }

    /// `Z` at grid step `step` (the value used on `[t_step, t_step+1)`).
    pub fn z_at(&self, step: usize, w: &[f64]) -> Point {
        let step = step.min(self.n_steps() - 1);
        if let Some(l) = &self.lattice {
            return linalg::point(&[LatticeData::interpolate(&l.z[step], step, w[0], l.sqrt_dt)]);
        }
        let r = self.regression.as_ref().expect("solution carries data");
        let phi = r.basis.features(w, self.times[step]);
        r.z_coef[step].iter().map(|c| linalg::dot(&phi, c)).collect()
    }

    /// Every stored `Y` value with its step index.
    pub fn y_values(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        if let Some(l) = &self.lattice {
            Box::new(l.y.iter().enumerate().flat_map(|(i, row)| row.iter().map(move |v| (i, *v))))
        } else {
            let r = self.regression.as_ref().expect("solution carries data");
            Box::new(r.sample_y.iter().enumerate().flat_map(|(i, row)| row.iter().map(move |v| (i, *v))))
        }
    }

    /// Applies `(y, z) -> (y', z')` nodewise, keeping the grid.
    pub(crate) fn map_values(
        &self,
        terminal: Terminal,
        f: impl Fn(usize, usize, f64, &[f64]) -> Result<(f64, Point)>,
    ) -> Result<DiscreteSolution> {
        let mut out = self.clone();
        out.terminal = terminal;
        if let Some(l) = out.lattice.as_mut() {
            let n = l.y.len() - 1;
            for i in 0..=n {
                for j in 0..=i {
                    let z = if i < n { l.z[i][j] } else { 0.0 };
                    let (y2, z2) = f(i, j, l.y[i][j], &[z])?;
                    l.y[i][j] = y2;
                    if i < n {
                        l.z[i][j] = z2[0];
                    }
                }
            }
            out.y0 = l.y[0][0];
            out.z0 = linalg::point(&[l.z[0][0]]);
        } else {
            return Err(Error::Unsupported("nodewise maps require a lattice solution".into()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (_, v) in out.y_values() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        out.diagnostics.y_min = lo;
        out.diagnostics.y_max = hi;
        Ok(out)
    }
}

/// Dispatches on `problem.backend`.
pub fn solve(problem: &BSDEProblem) -> Result<DiscreteSolution> {
    match problem.backend {
        Backend::Lattice => solve_lattice(problem),
        Backend::Regression => solve_regression(problem),
    }
}

/// `max_tau E_tau[int_tau^T |m Z|^2 ds]` over the solution grid.
pub fn energy_estimate(sol: &DiscreteSolution) -> f64 {
    sol.diagnostics.energy_estimate
}

struct Envelope {
    bounds: Option<Bounds>,
    eps: f64,
    z_max: Option<f64>,
}

impl Envelope {
    fn new(problem: &BSDEProblem) -> Self {
        let bounds = problem.bounds();
        let z_max = if problem.clamp_z {
            problem.energy_constant().filter(|c| c.is_finite()).map(|c| (c / problem.dt()).sqrt())
        } else {
            None
        };
        Self { bounds, eps: 10.0 / problem.n_steps as f64, z_max }
    }

    fn violates(&self, y: f64) -> bool {
        match self.bounds {
            Some(b) => y < b.c_low - self.eps || y > b.c_high + self.eps || !y.is_finite(),
            None => !y.is_finite(),
        }
    }

    /// Rescales `z` so that `|m z| <= z_max`; returns whether it clamped.
    fn clamp(&self, mz_norm: f64, z: &mut [f64]) -> bool {
        match self.z_max {
            Some(zm) if mz_norm > zm => {
                let k = zm / mz_norm;
                z.iter_mut().for_each(|v| *v *= k);
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests;
