//! Closed constraint sets and the `m`-weighted nearest-point map.
//!
//! Every set must contain the origin. Non-convex sets are finite unions of
//! convex primitives and finite point sets; a projection onto a union
//! projects onto each member and keeps the best candidate. When several
//! points attain the minimal weighted distance the lexicographically
//! smallest one is returned.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Point};

/// Relative tolerance under which two squared distances count as a tie.
const TIE_RTOL: f64 = 1e-12;
/// Stopping tolerance of the coordinate-descent box projection.
const BOX_CD_TOL: f64 = 1e-10;
/// Membership slack used by `project` post-conditions.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintKind {
    FullSpace {},
    Singleton { point: Vec<f64> },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    FiniteSet { points: Vec<Vec<f64>> },
    Union { members: Vec<ConstraintKind> },
    /// `{ x : normal . x <= offset }`
    Halfspace { normal: Vec<f64>, offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    kind: ConstraintKind,
    dim: usize,
}

impl ConstraintSet {
    pub fn new(kind: ConstraintKind, dim: usize) -> Result<Self> {
        validate_kind(&kind, dim)?;
        let set = Self { kind, dim };
        if !set.contains(&linalg::zeros(dim), 0.0) {
            return Err(Error::OriginNotFeasible);
        }
        Ok(set)
    }

    pub fn full_space(dim: usize) -> Self {
        Self { kind: ConstraintKind::FullSpace {}, dim }
    }

    pub fn origin(dim: usize) -> Self {
        Self { kind: ConstraintKind::Singleton { point: vec![0.0; dim] }, dim }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let dim = lower.len();
        Self::new(ConstraintKind::Box { lower, upper }, dim)
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full_space(&self) -> bool {
        matches!(self.kind, ConstraintKind::FullSpace {})
    }

    /// Adds a member, producing the union of `self` and `other`.
    pub fn union_with(&self, other: ConstraintKind) -> Result<Self> {
        let members = match &self.kind {
            ConstraintKind::Union { members } => {
                let mut m = members.clone();
                m.push(other);
                m
            }
            k => vec![k.clone(), other],
        };
        Self::new(ConstraintKind::Union { members }, self.dim)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        kind_contains(&self.kind, x, tol)
    }

    /// A minimiser of `|m (nu - target)|^2` over the set.
    pub fn project(&self, target: &[f64], m: &DMatrix<f64>) -> Result<Point> {
        self.check_args(target, m)?;
        Ok(self.project_unchecked(target, m))
    }

    /// `|m (project(target) - target)|^2`.
    pub fn dist_sq(&self, target: &[f64], m: &DMatrix<f64>) -> Result<f64> {
        self.check_args(target, m)?;
        Ok(self.dist_sq_unchecked(target, m))
    }

    pub(crate) fn project_unchecked(&self, target: &[f64], m: &DMatrix<f64>) -> Point {
        project_kind(&self.kind, target, m)
    }

    pub(crate) fn dist_sq_unchecked(&self, target: &[f64], m: &DMatrix<f64>) -> f64 {
        if self.is_full_space() {
            return 0.0;
        }
        let p = self.project_unchecked(target, m);
        linalg::weighted_dist_sq(m, &p, target)
    }

    fn check_args(&self, target: &[f64], m: &DMatrix<f64>) -> Result<()> {
        if target.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: target.len(), context: "projection target" });
        }
        if m.nrows() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: m.nrows(), context: "projection metric" });
        }
        linalg::check_invertible(m)
    }
}

fn validate_kind(kind: &ConstraintKind, dim: usize) -> Result<()> {
    let check_len = |v: &[f64], context: &'static str| -> Result<()> {
        if v.len() != dim {
            return Err(Error::Dimension { expected: dim, got: v.len(), context });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{context} must be finite")));
        }
        Ok(())
    };
    match kind {
        ConstraintKind::FullSpace {} => Ok(()),
        ConstraintKind::Singleton { point } => check_len(point, "singleton point"),
        ConstraintKind::Box { lower, upper } => {
            check_len(lower, "box lower bound")?;
            check_len(upper, "box upper bound")?;
            if lower.iter().zip(upper).any(|(l, u)| l > u) {
                return Err(Error::InvalidArgument("box lower bound exceeds upper bound".into()));
            }
            Ok(())
        }
        ConstraintKind::Ball { center, radius } => {
            check_len(center, "ball center")?;
            if !(radius.is_finite() && *radius >= 0.0) {
                return Err(Error::InvalidArgument("ball radius must be finite and non-negative".into()));
            }
            Ok(())
        }
        ConstraintKind::FiniteSet { points } => {
            if points.is_empty() {
                return Err(Error::InvalidArgument("finite set has no points".into()));
            }
            points.iter().try_for_each(|p| check_len(p, "finite set point"))
        }
        ConstraintKind::Union { members } => {
            if members.is_empty() {
                return Err(Error::EmptyUnion);
            }
            members.iter().try_for_each(|m| validate_kind(m, dim))
        }
        ConstraintKind::Halfspace { normal, offset } => {
            check_len(normal, "halfspace normal")?;
            if linalg::norm(normal) == 0.0 || !offset.is_finite() {
                return Err(Error::InvalidArgument("halfspace needs a non-zero normal and finite offset".into()));
            }
            Ok(())
        }
    }
}

fn kind_contains(kind: &ConstraintKind, x: &[f64], tol: f64) -> bool {
    match kind {
        ConstraintKind::FullSpace {} => true,
        ConstraintKind::Singleton { point } => linalg::norm(&linalg::sub(x, point)) <= tol,
        ConstraintKind::Box { lower, upper } => x
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
        ConstraintKind::Ball { center, radius } => linalg::norm(&linalg::sub(x, center)) <= radius + tol,
        ConstraintKind::FiniteSet { points } => points.iter().any(|p| linalg::norm(&linalg::sub(x, p)) <= tol),
        ConstraintKind::Union { members } => members.iter().any(|m| kind_contains(m, x, tol)),
        ConstraintKind::Halfspace { normal, offset } => {
            linalg::dot(normal, x) <= offset + tol * linalg::norm(normal).max(1.0)
        }
    }
}

/// Picks the closest candidate, breaking ties lexicographically.
fn best_of(candidates: impl Iterator<Item = Point>, target: &[f64], m: &DMatrix<f64>) -> Point {
    let mut best: Option<(f64, Point)> = None;
    for c in candidates {
        let d = linalg::weighted_dist_sq(m, &c, target);
        best = match best {
            None => Some((d, c)),
            Some((bd, bp)) => {
                let tie = (d - bd).abs() <= TIE_RTOL * (1.0 + bd.max(d));
                if (tie && linalg::lex_less(&c, &bp)) || (!tie && d < bd) {
                    Some((d.min(bd), c))
                } else {
                    Some((bd, bp))
                }
            }
        };
    }
    best.expect("non-empty candidate set").1
}

fn project_kind(kind: &ConstraintKind, target: &[f64], m: &DMatrix<f64>) -> Point {
    match kind {
        ConstraintKind::FullSpace {} => linalg::point(target),
        ConstraintKind::Singleton { point } => linalg::point(point),
        ConstraintKind::FiniteSet { points } => best_of(points.iter().map(|p| linalg::point(p)), target, m),
        ConstraintKind::Union { members } => {
            best_of(members.iter().map(|k| project_kind(k, target, m)), target, m)
        }
        ConstraintKind::Box { lower, upper } => project_box(lower, upper, target, m),
        ConstraintKind::Ball { center, radius } => project_ball(center, *radius, target, m),
        ConstraintKind::Halfspace { normal, offset } => project_halfspace(normal, *offset, target, m),
    }
}

fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.transpose() * m
}

fn project_box(lower: &[f64], upper: &[f64], target: &[f64], m: &DMatrix<f64>) -> Point {
    let clamp = |t: &[f64]| -> Point { t.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect() };
    if m.nrows() == 1 || linalg::is_diagonal(m) {
        return clamp(target);
    }
    let a = gram(m);
    if linalg::is_diagonal(&a) {
        return clamp(target);
    }
    // Projected coordinate descent on (nu - t)' A (nu - t).
    let d = target.len();
    let mut nu = clamp(target);
    for _ in 0..100_000 {
        let mut max_step = 0.0_f64;
        for k in 0..d {
            let mut off = 0.0;
            for j in 0..d {
                if j != k {
                    off += a[(k, j)] * (nu[j] - target[j]);
                }
            }
            let next = (target[k] - off / a[(k, k)]).clamp(lower[k], upper[k]);
            max_step = max_step.max((next - nu[k]).abs());
            nu[k] = next;
        }
        if max_step <= BOX_CD_TOL * 1e-3 {
            break;
        }
    }
    nu
}

fn project_ball(center: &[f64], radius: f64, target: &[f64], m: &DMatrix<f64>) -> Point {
    let offset = linalg::sub(target, center);
    let dist = linalg::norm(&offset);
    if dist <= radius {
        return linalg::point(target);
    }
    let a = gram(m);
    let scalar_metric = {
        let a00 = a[(0, 0)];
        (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| if i == j { a[(i, j)] == a00 } else { a[(i, j)] == 0.0 }))
    };
    let y: Point = if scalar_metric {
        linalg::scale(&offset, radius / dist)
    } else {
        // (A + mu I) y = A w with |y| = r; bisection on mu >= 0.
        let eig = SymmetricEigen::new(a);
        let w = eig.eigenvectors.transpose() * DVector::from_column_slice(&offset);
        let lam = &eig.eigenvalues;
        let norm_at = |mu: f64| -> f64 {
            (0..w.len()).map(|i| (lam[i] * w[i] / (lam[i] + mu)).powi(2)).sum::<f64>().sqrt()
        };
        let lam_max = lam.iter().fold(0.0_f64, |acc, v| acc.max(*v));
        let (mut lo, mut hi) = (0.0, lam_max * dist / radius.max(f64::MIN_POSITIVE));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_at(mid) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = hi;
        let coords = DVector::from_iterator(w.len(), (0..w.len()).map(|i| lam[i] * w[i] / (lam[i] + mu)));
        let y = &eig.eigenvectors * coords;
        linalg::point(y.as_slice())
    };
    let ny = linalg::norm(&y);
    let y = if ny > radius && ny > 0.0 { linalg::scale(&y, radius / ny) } else { y };
    linalg::add(center, &y)
}

fn project_halfspace(normal: &[f64], offset: f64, target: &[f64], m: &DMatrix<f64>) -> Point {
    let excess = linalg::dot(normal, target) - offset;
    if excess <= 0.0 {
        return linalg::point(target);
    }
    // A^{-1} a with A = m'm, i.e. m^{-1} m^{-T} a.
    let u = linalg::solve(&m.transpose(), normal);
    let dir = linalg::solve(m, &u);
    let denom = linalg::dot(normal, &dir);
    let mut nu = linalg::sub(target, &linalg::scale(&dir, excess / denom));
    // Rounding can leave the point a hair outside; pull it back along the normal.
    let over = linalg::dot(normal, &nu) - offset;
    if over > 0.0 {
        nu = linalg::sub(&nu, &linalg::scale(normal, over / linalg::norm_sq(normal)));
    }
    nu
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn full_space_is_identity() {
        let s = ConstraintSet::full_space(2);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        assert_eq!(s.project(&[3.0, -1.5], &m).unwrap().as_slice(), &[3.0, -1.5]);
        assert_eq!(s.dist_sq(&[3.0, -1.5], &m).unwrap(), 0.0);
    }

    #[test]
    fn singleton_origin() {
        let s = ConstraintSet::origin(1);
        assert_eq!(s.project(&[7.0], &eye(1)).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn finite_set_nearest_and_tie() {
        let s = ConstraintSet::new(ConstraintKind::FiniteSet { points: vec![vec![-1.0], vec![2.0], vec![0.0]] }, 1)
            .unwrap();
        // Without the origin member the set is rejected.
        assert_eq!(
            ConstraintSet::new(ConstraintKind::FiniteSet { points: vec![vec![-1.0], vec![2.0]] }, 1),
            Err(Error::OriginNotFeasible)
        );
        // Distances from 0.4 to {-1, 2}: 1.4 vs 1.6, via a union with the origin
        // placed far away from the query so it does not interfere.
        let two = ConstraintKind::FiniteSet { points: vec![vec![-1.0], vec![2.0]] };
        let far_origin = ConstraintSet::new(
            ConstraintKind::Union { members: vec![two.clone(), ConstraintKind::Singleton { point: vec![0.0] }] },
            1,
        )
        .unwrap();
        assert_eq!(project_kind(&two, &[0.4], &eye(1)).as_slice(), &[-1.0]);
        assert_eq!(project_kind(&two, &[0.5], &eye(1)).as_slice(), &[-1.0]);
        assert_eq!(far_origin.project(&[0.4], &eye(1)).unwrap().as_slice(), &[0.0]);
        assert_eq!(s.project(&[1.2], &eye(1)).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn box_clamp() {
        let s = ConstraintSet::boxed(vec![0.0], vec![1.0]).unwrap();
        assert!((s.dist_sq(&[1.5], &eye(1)).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(s.dist_sq(&[0.3], &eye(1)).unwrap(), 0.0);
    }

    #[test]
    fn ball_distance() {
        let s = ConstraintSet::new(ConstraintKind::Ball { center: vec![0.0, 0.0], radius: 1.0 }, 2).unwrap();
        assert!((s.dist_sq(&[3.0, 4.0], &eye(2)).unwrap() - 16.0).abs() < 1e-12);
        let p = s.project(&[3.0, 4.0], &eye(2)).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn halfspace_projection_under_metric() {
        let s = ConstraintSet::new(ConstraintKind::Halfspace { normal: vec![1.0, 1.0], offset: 1.0 }, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 2.0]);
        let p = s.project(&[2.0, 2.0], &m).unwrap();
        assert!(s.contains(&p, MEMBERSHIP_TOL));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let s = ConstraintSet::full_space(2);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(s.project(&[0.0, 0.0], &singular), Err(Error::SingularVolatility { .. })));
        assert_eq!(ConstraintSet::new(ConstraintKind::Union { members: vec![] }, 1), Err(Error::EmptyUnion));
        assert!(ConstraintSet::boxed(vec![1.0], vec![2.0]).is_err());
    }
}
