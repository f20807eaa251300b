//! Quadratic BSDEs driven by a Brownian martingale, constrained utility
//! maximisation, and numerical checks of the associated estimates.
//!
//! Two BSDE forms are supported:
//!
//! ```text
//! (Eq1)  dY = -F(s, Y, Z) ds + Z dM,   Y_T = B
//! (Eq2)  dU = -g(s, U, V) ds + V dM,   U_T = xi
//! ```
//!
//! with `M = m' W`. The exponential change of variable `U = exp(beta Y)`
//! maps the first form to the second.

pub mod constraints;
pub mod error;
pub mod generators;
pub mod halton;
pub mod linalg;
pub mod market;
pub mod maximize;
pub mod quadrature;
pub mod solver;
pub mod terminal;
pub mod transform;
pub mod verify;

pub use constraints::{ConstraintKind, ConstraintSet};
pub use error::{Error, Result};
pub use generators::{GeneratorSpec, H1Certificate, H2Certificate};
pub use market::{simulate_paths, MarketModel, PathBundle};
pub use solver::{solve, solve_lattice, solve_regression, BSDEProblem, DiscreteSolution};
pub use terminal::{Terminal, TerminalSpec};
pub use transform::Eq2Problem;
