//! Small dense helpers for the d-dimensional quantities that appear in hot
//! loops. Vectors of dimension up to four stay on the stack.

use nalgebra::DMatrix;
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type Point = SmallVec<[f64; 4]>;

pub fn point(xs: &[f64]) -> Point {
    SmallVec::from_slice(xs)
}

pub fn zeros(d: usize) -> Point {
    SmallVec::from_elem(0.0, d)
}

/// `m x` for a square `m`.
pub fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Point {
    let d = x.len();
    let mut out = zeros(m.nrows());
    for i in 0..m.nrows() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate().take(d) {
            acc += m[(i, j)] * xj;
        }
        out[i] = acc;
    }
    out
}

/// `m' x`.
pub fn mat_t_vec(m: &DMatrix<f64>, x: &[f64]) -> Point {
    let mut out = zeros(m.ncols());
    for j in 0..m.ncols() {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += m[(i, j)] * xi;
        }
        out[j] = acc;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], k: f64) -> Point {
    a.iter().map(|x| x * k).collect()
}

/// `|m (a - b)|^2`.
pub fn weighted_dist_sq(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    norm_sq(&mat_vec(m, &sub(a, b)))
}

/// `|m x|`.
pub fn weighted_norm(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    norm(&mat_vec(m, x))
}

/// Lexicographic order on coordinates.
pub fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Rejects matrices whose determinant is numerically zero relative to their scale.
pub fn check_invertible(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
            context: "volatility must be square",
        });
    }
    let det = m.determinant();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(m.nrows() as i32) {
        return Err(Error::SingularVolatility { det });
    }
    Ok(())
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Solves `m x = b`; callers guarantee invertibility.
pub fn solve(m: &DMatrix<f64>, b: &[f64]) -> Point {
    if m.nrows() == 1 {
        return SmallVec::from_elem(b[0] / m[(0, 0)], 1);
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = m.clone().lu().solve(&rhs).unwrap_or_else(|| rhs.clone());
    point(x.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_vec_matches_nalgebra() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = [0.5, -1.0];
        let ours = mat_vec(&m, &x);
        let theirs = &m * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(ours.as_slice(), theirs.as_slice());
        let t = mat_t_vec(&m, &x);
        let theirs_t = m.transpose() * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(t.as_slice(), theirs_t.as_slice());
    }

    #[test]
    fn singular_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(check_invertible(&m), Err(Error::SingularVolatility { .. })));
        assert!(check_invertible(&DMatrix::identity(3, 3)).is_ok());
    }

    #[test]
    fn lexicographic() {
        assert!(lex_less(&[-1.0, 5.0], &[2.0, 0.0]));
        assert!(lex_less(&[1.0, 0.0], &[1.0, 0.5]));
        assert!(!lex_less(&[1.0, 0.5], &[1.0, 0.5]));
    }
}
