//! Recombining binomial tree for `d = 1`.

use rayon::prelude::*;

use super::{Backend, BSDEProblem, DiscreteSolution, Diagnostics, Envelope, LatticeData, PicardInit};
use crate::error::{Error, Result};
use crate::linalg;

/// Rows shorter than this are processed sequentially.
const PAR_MIN_ROW: usize = 512;

struct NodeOut {
    y: f64,
    z: f64,
    iters: usize,
    clamped: bool,
}

/// `C(i, j) / 2^i` for `j = 0..=i`.
pub(crate) fn binomial_row(i: usize, ln_fact: &[f64]) -> Vec<f64> {
    let ln2 = std::f64::consts::LN_2;
    (0..=i).map(|j| (ln_fact[i] - ln_fact[j] - ln_fact[i - j] - i as f64 * ln2).exp()).collect()
}

pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

pub fn solve_lattice(problem: &BSDEProblem) -> Result<DiscreteSolution> {
    problem.validate()?;
    if problem.model.dim() != 1 {
        return Err(Error::Unsupported(format!("lattice backend needs d = 1, got d = {}", problem.model.dim())));
    }
    let n = problem.n_steps;
    let dt = problem.dt();
    let sdt = dt.sqrt();
    let driver = problem.driver().clone();
    let terminal = problem.terminal().clone();
    let env = Envelope::new(problem);
    let model = &problem.model;

    let mut y: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(n);
    y.resize(n + 1, Vec::new());
    z.resize(n, Vec::new());
    y[n] = (0..=n).map(|j| terminal.eval(&[(2.0 * j as f64 - n as f64) * sdt])).collect();

    let mut iters_max = 0;
    let mut clamps = 0;
    let mut energy_next = vec![0.0; n + 1];
    let mut energy_max = 0.0_f64;
    let mut mz2_dt: Vec<Vec<f64>> = vec![Vec::new(); n];

    for i in (0..n).rev() {
        let t = i as f64 * dt;
        let next = &y[i + 1];
        let node = |j: usize| -> Result<NodeOut> {
            let w = (2.0 * j as f64 - i as f64) * sdt;
            let (yu, yd) = (next[j + 1], next[j]);
            let e = 0.5 * (yu + yd);
            let m = model.vol(t, &[w])[(0, 0)];
            let mut zz = [(yu - yd) / (2.0 * sdt * m)];
            let clamped = env.clamp((m * zz[0]).abs(), &mut zz);
            let init = match problem.init {
                PicardInit::Propagated => e,
                PicardInit::Zero => 0.0,
                PicardInit::Value(c) => c,
            };
            let (yy, iters) = super::picard_step(|v| driver(t, &[w], v, &zz), e, dt, init, &problem.picard)?;
            Ok(NodeOut { y: yy, z: zz[0], iters, clamped })
        };
        let row: Vec<NodeOut> = if i + 1 >= PAR_MIN_ROW {
            (0..=i).into_par_iter().map(node).collect::<Result<_>>()?
        } else {
            (0..=i).map(node).collect::<Result<_>>()?
        };
        let mut yi = Vec::with_capacity(i + 1);
        let mut zi = Vec::with_capacity(i + 1);
        let mut energy = Vec::with_capacity(i + 1);
        let mut mzd = Vec::with_capacity(i + 1);
        for (j, out) in row.into_iter().enumerate() {
            iters_max = iters_max.max(out.iters);
            clamps += usize::from(out.clamped);
            let w = (2.0 * j as f64 - i as f64) * sdt;
            let m = model.vol(t, &[w])[(0, 0)];
            let inc = (m * out.z).powi(2) * dt;
            let e = inc + 0.5 * (energy_next[j] + energy_next[j + 1]);
            energy_max = energy_max.max(e);
            energy.push(e);
            mzd.push(inc);
            yi.push(out.y);
            zi.push(out.z);
        }
        energy_next = energy;
        mz2_dt[i] = mzd;
        y[i] = yi;
        z[i] = zi;
    }

    // Unconditional remaining energy: E int_{t_i}^T = sum_{k >= i} E[|m Z_k|^2 dt].
    let ln_fact = ln_factorials(n);
    let mut per_step = vec![0.0; n + 1];
    for (i, row) in mz2_dt.iter().enumerate() {
        let p = binomial_row(i, &ln_fact);
        per_step[i] = linalg::dot(&p, row);
    }
    let mut profile = vec![0.0; n + 1];
    for i in (0..n).rev() {
        profile[i] = profile[i + 1] + per_step[i];
    }

    let mut violations = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut count = 0;
    for row in &y {
        for &v in row {
            violations += usize::from(env.violates(v));
            lo = lo.min(v);
            hi = hi.max(v);
            count += 1;
        }
    }
    let y0 = y[0][0];
    let z0 = linalg::point(&[z[0][0]]);
    Ok(DiscreteSolution {
        times: (0..=n).map(|i| i as f64 * dt).collect(),
        dim: 1,
        backend: Backend::Lattice,
        y0,
        z0,
        lattice: Some(LatticeData { y, z, sqrt_dt: sdt }),
        regression: None,
        diagnostics: Diagnostics {
            picard_iters_max: iters_max,
            bound_violations: violations,
            bound_epsilon: env.eps,
            bounds: env.bounds,
            z_clamps: clamps,
            z_max: env.z_max,
            energy_estimate: energy_max,
            energy_constant: problem.energy_constant(),
            y_min: lo,
            y_max: hi,
            n_values: count,
        },
        energy_profile: profile,
        terminal,
    })
}
