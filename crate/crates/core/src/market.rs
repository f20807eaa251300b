//! Market primitives and Brownian path simulation.
//!
//! The driving martingale is `M = m' W` for a d-dimensional Brownian motion
//! `W`, so that `z' d<M> z = |m z|^2 dt`. The clock is the identity clock
//! `dC = dt`. Coefficients may depend on `(t, W_t)`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::linalg::{self, Point};

pub type MatrixField = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(f64, &[f64]) -> Point + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Coefficients {
    Constant { vol: DMatrix<f64>, premium: Point },
    Varying { vol: MatrixField, premium: VectorField },
}

/// Volatility loading `m`, risk premium `lambda`, horizon `T`.
#[derive(Clone)]
pub struct MarketModel {
    dim: usize,
    horizon: f64,
    coefficients: Coefficients,
    a_lambda: f64,
}

impl fmt::Debug for MarketModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("MarketModel");
        s.field("dim", &self.dim).field("horizon", &self.horizon);
        if let Coefficients::Constant { vol, premium } = &self.coefficients {
            s.field("vol", &vol.as_slice()).field("premium", &premium.as_slice());
        }
        s.field("a_lambda", &self.a_lambda).finish_non_exhaustive()
    }
}

impl MarketModel {
    /// Constant coefficients. The declared `a_lambda` defaults to the exact
    /// value `|m lambda|^2 T`.
    pub fn constant(vol: DMatrix<f64>, premium: &[f64], horizon: f64) -> Result<Self> {
        let dim = vol.nrows();
        ensure(horizon.is_finite() && horizon > 0.0, || {
            format!("horizon must be positive and finite, got {horizon}")
        })?;
        if premium.len() != dim {
            return Err(Error::Dimension { expected: dim, got: premium.len(), context: "risk premium" });
        }
        linalg::check_invertible(&vol)?;
        ensure(premium.iter().all(|v| v.is_finite()), || "risk premium must be finite".into())?;
        let a_lambda = linalg::norm_sq(&linalg::mat_vec(&vol, premium)) * horizon;
        Ok(Self {
            dim,
            horizon,
            coefficients: Coefficients::Constant { vol, premium: linalg::point(premium) },
            a_lambda,
        })
    }

    /// One risky asset with drift `mu`, rate `r` and volatility `sigma`:
    /// `m = sigma`, `lambda = (mu - r) / sigma^2`.
    pub fn black_scholes(mu: f64, r: f64, sigma: f64, horizon: f64) -> Result<Self> {
        ensure(sigma != 0.0, || "sigma must be non-zero".into())?;
        Self::constant(DMatrix::from_element(1, 1, sigma), &[(mu - r) / (sigma * sigma)], horizon)
    }

    /// Coefficients depending on `(t, W_t)`. The structure-condition bound
    /// `a_lambda` must be declared.
    pub fn varying(
        dim: usize,
        horizon: f64,
        vol: MatrixField,
        premium: VectorField,
        a_lambda: f64,
    ) -> Result<Self> {
        ensure(dim >= 1, || "dimension must be at least 1".into())?;
        ensure(horizon.is_finite() && horizon > 0.0, || {
            format!("horizon must be positive and finite, got {horizon}")
        })?;
        ensure(a_lambda >= 0.0, || "a_lambda must be non-negative".into())?;
        let origin = linalg::zeros(dim);
        let m0 = vol(0.0, &origin);
        if m0.nrows() != dim {
            return Err(Error::Dimension { expected: dim, got: m0.nrows(), context: "volatility field" });
        }
        linalg::check_invertible(&m0)?;
        Ok(Self { dim, horizon, coefficients: Coefficients::Varying { vol, premium }, a_lambda })
    }

    pub fn with_a_lambda(mut self, a_lambda: f64) -> Self {
        self.a_lambda = a_lambda;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn a_lambda(&self) -> f64 {
        self.a_lambda
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.coefficients, Coefficients::Constant { .. })
    }

    pub fn constant_coefficients(&self) -> Option<(&DMatrix<f64>, &Point)> {
        match &self.coefficients {
            Coefficients::Constant { vol, premium } => Some((vol, premium)),
            Coefficients::Varying { .. } => None,
        }
    }

    pub fn vol(&self, t: f64, state: &[f64]) -> Cow<'_, DMatrix<f64>> {
        match &self.coefficients {
            Coefficients::Constant { vol, .. } => Cow::Borrowed(vol),
            Coefficients::Varying { vol, .. } => Cow::Owned(vol(t, state)),
        }
    }

    pub fn premium(&self, t: f64, state: &[f64]) -> Cow<'_, Point> {
        match &self.coefficients {
            Coefficients::Constant { premium, .. } => Cow::Borrowed(premium),
            Coefficients::Varying { premium, .. } => Cow::Owned(premium(t, state)),
        }
    }

    /// `|m lambda|^2` at `(t, state)`.
    pub fn premium_rate(&self, t: f64, state: &[f64]) -> f64 {
        let m = self.vol(t, state);
        let lambda = self.premium(t, state);
        linalg::norm_sq(&linalg::mat_vec(&m, &lambda))
    }

    /// Checks invertibility of `m` on a set of sample points.
    pub fn validate_at(&self, samples: &[(f64, Point)]) -> Result<()> {
        for (t, x) in samples {
            linalg::check_invertible(&self.vol(*t, x))?;
        }
        Ok(())
    }
}

/// Gaussian increments of `W` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub dt: f64,
    pub seed: u64,
    increments: Vec<f64>,
}

impl PathBundle {
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * self.n_steps + step) * self.dim;
        &self.increments[start..start + self.dim]
    }

    pub fn path_increments(&self, path: usize) -> &[f64] {
        let len = self.n_steps * self.dim;
        &self.increments[path * len..(path + 1) * len]
    }

    /// `W` at every grid point, laid out as `[path][step 0..=n_steps][dim]`.
    pub fn states(&self) -> Vec<f64> {
        let d = self.dim;
        let stride = (self.n_steps + 1) * d;
        let mut out = vec![0.0; self.n_paths * stride];
        out.par_chunks_mut(stride).enumerate().for_each(|(p, row)| {
            let inc = self.path_increments(p);
            for k in 0..self.n_steps {
                for c in 0..d {
                    row[(k + 1) * d + c] = row[k * d + c] + inc[k * d + c];
                }
            }
        });
        out
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Simulates i.i.d. `N(0, dt I)` increments. Each path draws from its own
/// ChaCha stream keyed by `(seed, path)`, so output does not depend on the
/// number of worker threads.
pub fn simulate_paths(model: &MarketModel, n_paths: usize, n_steps: usize, seed: u64) -> Result<PathBundle> {
    ensure(n_paths >= 1, || "n_paths must be at least 1".into())?;
    ensure(n_steps >= 1, || "n_steps must be at least 1".into())?;
    ensure(model.horizon.is_finite(), || "horizon must be finite".into())?;
    let d = model.dim;
    let dt = model.horizon / n_steps as f64;
    let sd = dt.sqrt();
    let per_path = n_steps * d;
    let mut increments = vec![0.0; n_paths * per_path];
    increments.par_chunks_mut(per_path).enumerate().for_each(|(p, row)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    });
    Ok(PathBundle { n_paths, n_steps, dim: d, dt, seed, increments })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureReport {
    pub a_lambda_hat: f64,
    pub declared: f64,
    pub pass: bool,
}

/// Largest discretised `int_0^T |m lambda|^2 dt` over the bundle's paths,
/// compared with the declared bound.
pub fn check_structure_condition(model: &MarketModel, bundle: &PathBundle) -> StructureReport {
    let d = bundle.dim;
    let stride = (bundle.n_steps + 1) * d;
    let states = bundle.states();
    let per_path: Vec<f64> = states
        .par_chunks(stride)
        .map(|row| {
            (0..bundle.n_steps)
                .map(|k| model.premium_rate(bundle.time(k), &row[k * d..(k + 1) * d]) * bundle.dt)
                .sum::<f64>()
        })
        .collect();
    let a_lambda_hat = per_path.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    StructureReport {
        a_lambda_hat,
        declared: model.a_lambda,
        pass: a_lambda_hat <= model.a_lambda * (1.0 + 1e-12) + 1e-15,
    }
}
