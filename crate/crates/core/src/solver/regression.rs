//! Least-squares Monte Carlo for `d >= 1`.
//!
//! Conditional expectations at step `k` are projections onto monomials of
//! `W_k / sqrt(t_k)` of total degree at most `basis_degree`. Sums over paths
//! are accumulated in fixed-size chunks and combined in chunk order, so the
//! output does not depend on the number of threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::{Backend, BSDEProblem, DiscreteSolution, Diagnostics, Envelope, PicardInit, RegressionData};
use crate::error::{Error, Result};
use crate::linalg::{self, Point};
use crate::market::simulate_paths;

const CHUNK: usize = 4096;
const MAX_COND: f64 = 1e12;

/// Monomials of total degree `<= degree` in `dim` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub dim: usize,
    pub degree: usize,
    exponents: Vec<Vec<u32>>,
}

impl Basis {
    pub fn new(dim: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        let mut cur = vec![0u32; dim];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if pos == cur.len() {
                out.push(cur.clone());
                return;
            }
            for e in 0..=left {
                cur[pos] = e;
                rec(pos + 1, left - e, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, degree as u32, &mut cur, &mut exponents);
        exponents.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
        Self { dim, degree, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Features of `w` at time `t`; at `t = 0` only the constant survives.
    pub fn features(&self, w: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        if t <= 0.0 {
            out[0] = 1.0;
            return out;
        }
        let s = 1.0 / t.sqrt();
        let x: Point = w.iter().map(|v| v * s).collect();
        for (k, e) in self.exponents.iter().enumerate() {
            out[k] = e.iter().zip(x.iter()).map(|(p, xi)| xi.powi(*p as i32)).product();
        }
        out
    }
}

/// Solves the normal equations for several right-hand sides.
fn least_squares(gram: &DMatrix<f64>, rhs: &[DVector<f64>], step: usize) -> Result<Vec<Vec<f64>>> {
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_COND {
        return Err(Error::IllConditioned { step, cond });
    }
    let chol = gram.clone().cholesky().ok_or(Error::IllConditioned { step, cond })?;
    Ok(rhs.iter().map(|b| chol.solve(b).as_slice().to_vec()).collect())
}

/// Chunked sums of `phi phi'` (when `with_gram`) and `phi * target_r` over all
/// paths, combined in chunk order.
fn accumulate(
    np: usize,
    nf: usize,
    feats: &(impl Fn(usize) -> Vec<f64> + Sync),
    with_gram: bool,
    n_rhs: usize,
    target: impl Fn(usize, &mut [f64]) + Sync,
) -> (Option<DMatrix<f64>>, Vec<DVector<f64>>) {
    let partials: Vec<(DMatrix<f64>, Vec<DVector<f64>>)> = (0..np)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut g = DMatrix::zeros(if with_gram { nf } else { 0 }, if with_gram { nf } else { 0 });
            let mut b = vec![DVector::zeros(nf); n_rhs];
            let mut vals = vec![0.0; n_rhs];
            for &p in idx {
                let phi = feats(p);
                target(p, &mut vals);
                for (r, v) in vals.iter().enumerate() {
                    for a in 0..nf {
                        b[r][a] += phi[a] * v;
                    }
                }
                if with_gram {
                    for a in 0..nf {
                        for c in a..nf {
                            g[(a, c)] += phi[a] * phi[c];
                        }
                    }
                }
            }
            (g, b)
        })
        .collect();
    let mut gram = DMatrix::zeros(nf, nf);
    let mut rhs = vec![DVector::zeros(nf); n_rhs];
    for (g, b) in partials {
        if with_gram {
            gram += g;
        }
        for (acc, v) in rhs.iter_mut().zip(b) {
            *acc += v;
        }
    }
    if !with_gram {
        return (None, rhs);
    }
    for a in 0..nf {
        for c in 0..a {
            gram[(a, c)] = gram[(c, a)];
        }
    }
    (Some(gram), rhs)
}

pub fn solve_regression(problem: &BSDEProblem) -> Result<DiscreteSolution> {
    problem.validate()?;
    let settings = problem.regression;
    if settings.n_paths < 1000 {
        return Err(Error::InvalidArgument(format!("regression needs n_paths >= 1000, got {}", settings.n_paths)));
    }
    let model = &problem.model;
    let d = model.dim();
    let n = problem.n_steps;
    let dt = problem.dt();
    let np = settings.n_paths;
    let bundle = simulate_paths(model, np, n, settings.seed)?;
    let basis = Basis::new(d, settings.basis_degree);
    let nb = basis.len();
    let driver = problem.driver().clone();
    let terminal = problem.terminal().clone();
    let env = Envelope::new(problem);
    let m_inv = model
        .constant_coefficients()
        .map(|(m, _)| m.clone().try_inverse().ok_or(Error::SingularVolatility { det: m.determinant() }))
        .transpose()?;
    let n_store = settings.n_store.min(np);

    // W_N on every path; earlier states are recovered by subtracting increments.
    let mut w_cur = vec![0.0; np * d];
    w_cur.par_chunks_mut(d).enumerate().for_each(|(p, w)| {
        let inc = bundle.path_increments(p);
        for k in 0..n {
            for c in 0..d {
                w[c] += inc[k * d + c];
            }
        }
    });
    let mut y_next: Vec<f64> = w_cur.par_chunks(d).map(|w| terminal.eval(w)).collect();
    let mut e_next = vec![0.0; np];

    let mut sample_y = vec![Vec::new(); n + 1];
    let mut sample_z = vec![Vec::new(); n + 1];
    let mut sample_w = vec![Vec::new(); n + 1];
    sample_y[n] = y_next[..n_store].to_vec();
    sample_z[n] = vec![0.0; n_store * d];
    sample_w[n] = w_cur[..n_store * d].to_vec();

    let mut y_coef = vec![Vec::new(); n];
    let mut z_coef = vec![Vec::new(); n];
    let mut profile = vec![0.0; n + 1];
    let mut iters_max = 0;
    let mut clamps = 0;
    let mut energy_max = 0.0_f64;
    let mut violations: usize = y_next.iter().filter(|v| env.violates(**v)).count();
    let (mut lo, mut hi) = y_next.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let mut y0_std_err = 0.0;

    for k in (0..n).rev() {
        let t = k as f64 * dt;
        let w_prev: Vec<f64> = w_cur
            .par_chunks(d)
            .enumerate()
            .flat_map_iter(|(p, w)| {
                let inc = bundle.increment(p, k);
                (0..d).map(move |c| w[c] - inc[c])
            })
            .collect();
        let constant_only = k == 0;
        let nf = if constant_only { 1 } else { nb };
        let feats = |p: usize| -> Vec<f64> {
            if constant_only {
                vec![1.0]
            } else {
                basis.features(&w_prev[p * d..(p + 1) * d], t)
            }
        };

        // Pass 1: Gram matrix, E[Y_{k+1}] and the remaining energy.
        let (gram, rhs) = accumulate(np, nf, &feats, true, 2, |p, out| {
            out[0] = y_next[p];
            out[1] = e_next[p];
        });
        let gram = gram.expect("requested");
        let fitted = least_squares(&gram, &rhs, k)?;
        // Pass 1b: E[(Y_{k+1} - E_k Y_{k+1}) dW], centred to cut the variance.
        let cy = &fitted[0];
        let (_, rhs_z) = accumulate(np, nf, &feats, false, d, |p, out| {
            let centred = y_next[p] - linalg::dot(&feats(p), cy);
            let inc = bundle.increment(p, k);
            for c in 0..d {
                out[c] = centred * inc[c];
            }
        });
        let mut coefs = vec![fitted[0].clone()];
        coefs.extend(least_squares(&gram, &rhs_z, k)?);
        coefs.push(fitted[1].clone());
        if constant_only {
            let mean = coefs[0][0];
            let var = y_next.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (np as f64 - 1.0);
            y0_std_err = (var / np as f64).sqrt();
        }

        // Pass 2: per-path Z and implicit Y.
        let per_path: Vec<(f64, Point, f64, usize, bool)> = (0..np)
            .into_par_iter()
            .map(|p| {
                let w = &w_prev[p * d..(p + 1) * d];
                let phi = feats(p);
                let e = linalg::dot(&phi, &coefs[0]);
                let g: Point = (0..d).map(|c| linalg::dot(&phi, &coefs[1 + c]) / dt).collect();
                let m = model.vol(t, w);
                let mut z = match &m_inv {
                    Some(mi) => linalg::mat_vec(mi, &g),
                    None => linalg::solve(&m, &g),
                };
                let mz = linalg::weighted_norm(&m, &z);
                let clamped = env.clamp(mz, &mut z);
                let mz2 = linalg::norm_sq(&linalg::mat_vec(&m, &z));
                let init = match problem.init {
                    PicardInit::Propagated => e,
                    PicardInit::Zero => 0.0,
                    PicardInit::Value(c) => c,
                };
                let (y, iters) = super::picard_step(|v| driver(t, w, v, &z), e, dt, init, &problem.picard)?;
                let energy = mz2 * dt + linalg::dot(&phi, &coefs[1 + d]);
                Ok((y, z, energy, iters, clamped))
            })
            .collect::<Result<_>>()?;

        let mut y_cur = Vec::with_capacity(np);
        let mut e_cur = Vec::with_capacity(np);
        let mut zs = Vec::with_capacity(n_store * d);
        let mut mean_energy = 0.0;
        for (p, (y, z, energy, iters, clamped)) in per_path.into_iter().enumerate() {
            iters_max = iters_max.max(iters);
            clamps += usize::from(clamped);
            violations += usize::from(env.violates(y));
            lo = lo.min(y);
            hi = hi.max(y);
            energy_max = energy_max.max(energy);
            mean_energy += energy;
            if p < n_store {
                zs.extend_from_slice(&z);
            }
            y_cur.push(y);
            e_cur.push(energy);
        }
        profile[k] = mean_energy / np as f64;

        // Pass 3: smooth representation of Y_k and Z_k for evaluation off the paths.
        let (_, by) = accumulate(np, nf, &feats, false, 1, |p, out| out[0] = y_cur[p]);
        let pad = |mut v: Vec<f64>| {
            v.resize(nb, 0.0);
            v
        };
        y_coef[k] = pad(least_squares(&gram, &by, k)?.remove(0));
        z_coef[k] = (0..d)
            .map(|c| {
                // Z = m^{-1} E[Y dW] / dt; only meaningful for constant m.
                let mi = m_inv.clone().unwrap_or_else(|| DMatrix::identity(d, d));
                let mut out = vec![0.0; nf];
                for (r, coef) in coefs[1..1 + d].iter().enumerate() {
                    for a in 0..nf {
                        out[a] += mi[(c, r)] * coef[a] / dt;
                    }
                }
                pad(out)
            })
            .collect();

        sample_y[k] = y_cur[..n_store].to_vec();
        sample_z[k] = zs;
        sample_w[k] = w_prev[..n_store * d].to_vec();
        y_next = y_cur;
        e_next = e_cur;
        w_cur = w_prev;
    }

    let y0 = y_next[0];
    let z0: Point = linalg::point(&sample_z[0][..d]);
    Ok(DiscreteSolution {
        times: (0..=n).map(|i| i as f64 * dt).collect(),
        dim: d,
        backend: Backend::Regression,
        y0,
        z0,
        lattice: None,
        regression: Some(RegressionData {
            basis,
            y_coef,
            z_coef,
            sample_y,
            sample_z,
            sample_w,
            n_paths: np,
            y0_std_err,
        }),
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
            n_values: np * (n + 1),
        },
        energy_profile: profile,
        terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes() {
        assert_eq!(Basis::new(1, 4).len(), 5);
        assert_eq!(Basis::new(2, 4).len(), 15);
        assert_eq!(Basis::new(3, 2).len(), 10);
        let b = Basis::new(2, 1);
        assert_eq!(b.features(&[2.0, -4.0], 4.0), vec![1.0, 1.0, -2.0]);
        assert_eq!(b.features(&[2.0, -4.0], 0.0), vec![1.0, 0.0, 0.0]);
    }
}
