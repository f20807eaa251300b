use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self { tol: 1e-12, max_iters: 200 }
    }
}

/// Starting point of the inner iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardInit {
    /// The conditional expectation of the next slice.
    Propagated,
    Zero,
    Value(f64),
}

/// Solves `y = expectation + f(y) dt`.
///
/// Plain Picard steps are accelerated with the secant slope `s` of the map:
/// the update is `y + r / (1 - s)` while the map looks contractive and a
/// damped `y + r / (1 + |s|)` otherwise. Returns the root and the number of
/// updates performed.
pub fn picard_step(
    f: impl Fn(f64) -> f64,
    expectation: f64,
    dt: f64,
    init: f64,
    settings: &PicardSettings,
) -> Result<(f64, usize)> {
    let map = |y: f64| expectation + dt * f(y);
    let mut y = init;
    let mut ty = map(y);
    let mut prev: Option<(f64, f64)> = None;
    for it in 0..=settings.max_iters {
        let r = ty - y;
        if !r.is_finite() {
            return Err(Error::PicardDiverged { iters: it, residual: r });
        }
        if r.abs() <= settings.tol * y.abs().max(1.0) {
            return Ok((y, it));
        }
        if it == settings.max_iters {
            return Err(Error::PicardDiverged { iters: it, residual: r.abs() });
        }
        let omega = match prev {
            Some((py, pty)) if y != py => {
                let s = (ty - pty) / (y - py);
                if !s.is_finite() {
                    1.0
                } else if s < 1.0 - 1e-3 {
                    1.0 / (1.0 - s)
                } else {
                    1.0 / (1.0 + s.abs())
                }
            }
            _ => 1.0,
        };
        prev = Some((y, ty));
        y += omega * r;
        ty = map(y);
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn y_independent_converges_in_one_step() {
        let (y, it) = picard_step(|_| 3.0, 1.0, 0.1, 1.0, &PicardSettings::default()).unwrap();
        assert!((y - 1.3).abs() < 1e-15);
        assert_eq!(it, 1);
    }

    #[test]
    fn linear_fixed_point() {
        let (y, _) = picard_step(|y| -y, 1.0, 0.01, 1.0, &PicardSettings::default()).unwrap();
        assert!((y - 1.0 / 1.01).abs() < 1e-14);
        assert!((y - 0.990099).abs() < 1e-6);
    }

    #[test]
    fn quadratic_without_root_diverges() {
        let err = picard_step(|y| y * y, 1.0, 1.0, 1.0, &PicardSettings::default()).unwrap_err();
        assert!(matches!(err, Error::PicardDiverged { .. }));
    }

    #[test]
    fn stiff_linear_map_is_damped() {
        // Plain Picard diverges for slope -3; the secant update still converges.
        let (y, _) = picard_step(|y| -30.0 * y, 2.0, 0.1, 0.0, &PicardSettings::default()).unwrap();
        assert!((y - 0.5).abs() < 1e-12);
    }
}
