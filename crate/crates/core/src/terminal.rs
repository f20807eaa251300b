//! Bounded terminal conditions `B = h(W_T)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg;

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Zero {},
    Constant {
        value: f64,
    },
    /// `clamp(weights . W_T, -cap, cap) + offset`
    ClippedLinear {
        weights: Vec<f64>,
        cap: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `amplitude * tanh(weights . W_T) + offset`
    Tanh {
        weights: Vec<f64>,
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl TerminalSpec {
    pub fn is_zero(&self) -> bool {
        match self {
            TerminalSpec::Zero {} => true,
            TerminalSpec::Constant { value } => *value == 0.0,
            TerminalSpec::ClippedLinear { cap, offset, .. } => *cap == 0.0 && *offset == 0.0,
            TerminalSpec::Tanh { amplitude, offset, .. } => *amplitude == 0.0 && *offset == 0.0,
        }
    }
}

#[derive(Clone)]
pub struct Terminal {
    f: TerminalFn,
    sup_norm: f64,
    constant: Option<f64>,
    label: String,
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Terminal").field("label", &self.label).field("sup_norm", &self.sup_norm).finish()
    }
}

impl Terminal {
    pub fn constant(value: f64) -> Self {
        Self { f: Arc::new(move |_| value), sup_norm: value.abs(), constant: Some(value), label: format!("{value}") }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// A user-supplied function with a declared bound on `|h|`.
    pub fn custom(label: impl Into<String>, sup_norm: f64, f: TerminalFn) -> Self {
        Self { f, sup_norm, constant: None, label: label.into() }
    }

    pub fn from_spec(spec: &TerminalSpec, dim: usize) -> Result<Self> {
        let check_weights = |w: &[f64]| -> Result<()> {
            if w.len() != dim {
                return Err(Error::Dimension { expected: dim, got: w.len(), context: "terminal weights" });
            }
            ensure(w.iter().all(|v| v.is_finite()), || "terminal weights must be finite".into())
        };
        Ok(match spec.clone() {
            TerminalSpec::Zero {} => Self::zero(),
            TerminalSpec::Constant { value } => {
                ensure(value.is_finite(), || "terminal value must be finite".into())?;
                Self::constant(value)
            }
            TerminalSpec::ClippedLinear { weights, cap, offset } => {
                check_weights(&weights)?;
                ensure(cap.is_finite() && cap >= 0.0 && offset.is_finite(), || {
                    "clipped_linear needs a finite cap >= 0 and finite offset".into()
                })?;
                let label = format!("clip({weights:?}.W, {cap}) + {offset}");
                Self::custom(
                    label,
                    cap + offset.abs(),
                    Arc::new(move |w| linalg::dot(&weights, w).clamp(-cap, cap) + offset),
                )
            }
            TerminalSpec::Tanh { weights, amplitude, offset } => {
                check_weights(&weights)?;
                ensure(amplitude.is_finite() && offset.is_finite(), || "tanh terminal needs finite parameters".into())?;
                let label = format!("{amplitude} tanh({weights:?}.W) + {offset}");
                Self::custom(
                    label,
                    amplitude.abs() + offset.abs(),
                    Arc::new(move |w| amplitude * linalg::dot(&weights, w).tanh() + offset),
                )
            }
        })
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        (self.f)(w)
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn function(&self) -> &TerminalFn {
        &self.f
    }

    /// `B + c`.
    pub fn shifted(&self, c: f64) -> Self {
        if let Some(v) = self.constant {
            return Self::constant(v + c);
        }
        let f = self.f.clone();
        Self {
            f: Arc::new(move |w| f(w) + c),
            sup_norm: self.sup_norm + c.abs(),
            constant: None,
            label: format!("{} + {c}", self.label),
        }
    }

    /// `h(B)` for a scalar map `h` whose bound on the range of `B` is `sup_norm`.
    pub fn map(&self, label: &str, sup_norm: f64, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        if let Some(v) = self.constant {
            let hv = h(v);
            let mut out = Self::constant(hv);
            out.label = format!("{label}({})", self.label);
            return out;
        }
        let f = self.f.clone();
        Self {
            f: Arc::new(move |w| h(f(w))),
            sup_norm,
            constant: None,
            label: format!("{label}({})", self.label),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        let spec: TerminalSpec =
            serde_json::from_str(r#"{"kind":"tanh","weights":[2.0],"amplitude":0.5}"#).unwrap();
        let t = Terminal::from_spec(&spec, 1).unwrap();
        assert!((t.eval(&[0.3]) - 0.5 * 0.6f64.tanh()).abs() < 1e-15);
        assert_eq!(t.sup_norm(), 0.5);
        assert!(serde_json::from_str::<TerminalSpec>(r#"{"kind":"zero","extra":1}"#).is_err());
    }

    #[test]
    fn clipped_and_shift() {
        let spec = TerminalSpec::ClippedLinear { weights: vec![1.0], cap: 1.0, offset: 0.0 };
        let t = Terminal::from_spec(&spec, 1).unwrap();
        assert_eq!(t.eval(&[3.0]), 1.0);
        assert_eq!(t.eval(&[-0.25]), -0.25);
        let s = t.shifted(-0.5);
        assert_eq!(s.eval(&[3.0]), 0.5);
        assert_eq!(s.sup_norm(), 1.5);
        assert!(Terminal::from_spec(&spec, 2).is_err());
    }

    #[test]
    fn constant_map() {
        let t = Terminal::constant(2.0).map("exp", 2f64.exp(), f64::exp);
        assert_eq!(t.as_constant(), Some(2f64.exp()));
    }
}
