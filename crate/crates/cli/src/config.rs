//! Experiment configuration: schema validation, defaults and hashing.
//!
//! Validation walks the raw JSON and collects every offending path before
//! anything is computed; typed values are only built from a clean document.

use std::fmt;

use qbsde::constraints::{ConstraintKind, ConstraintSet};
use qbsde::generators::CustomDriver;
use qbsde::maximize::{UtilityKind, UtilitySpec};
use qbsde::solver::{Backend, PicardSettings, RegressionSettings};
use qbsde::terminal::TerminalSpec;
use qbsde::verify::TheoremId;
use qbsde::MarketModel;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const DEFAULT_N_STEPS: usize = 400;
pub const DEFAULT_N_PATHS: usize = 100_000;
pub const DEFAULT_BASIS_DEGREE: usize = 4;
pub const DEFAULT_PICARD_TOL: f64 = 1e-12;
pub const DEFAULT_PICARD_MAX_ITERS: usize = 200;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Maximize,
    Verify,
    Ladder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub d: usize,
    pub m: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub a_lambda: Option<f64>,
}

impl ModelConfig {
    pub fn build(&self) -> qbsde::Result<MarketModel> {
        let flat: Vec<f64> = self.m.iter().flatten().copied().collect();
        let model = MarketModel::constant(DMatrix::from_row_slice(self.d, self.d, &flat), &self.lambda, self.horizon)?;
        Ok(match self.a_lambda {
            Some(a) => model.with_a_lambda(a),
            None => model,
        })
    }

    fn unit() -> Self {
        Self { d: 1, m: vec![vec![1.0]], lambda: vec![0.0], horizon: 1.0, a_lambda: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityConfig {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_u: Option<f64>,
    #[serde(rename = "B")]
    pub liability: TerminalSpec,
    pub x: f64,
}

impl UtilityConfig {
    pub fn spec(&self) -> UtilitySpec {
        let kind = match self.kind.as_str() {
            "exponential" => UtilityKind::Exponential { alpha: self.alpha.unwrap_or(f64::NAN) },
            "power" => UtilityKind::Power { gamma_u: self.gamma_u.unwrap_or(f64::NAN) },
            _ => UtilityKind::Log {},
        };
        UtilitySpec { kind, liability: self.liability.clone(), x: self.x }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorConfig {
    #[serde(flatten)]
    pub driver: CustomDriver,
    pub terminal: TerminalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericsConfig {
    pub backend: Backend,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub basis_degree: usize,
    /// Paths whose values are written to `solution.csv` (regression only).
    pub n_store: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Lattice,
            n_steps: DEFAULT_N_STEPS,
            n_paths: DEFAULT_N_PATHS,
            seed: DEFAULT_SEED,
            picard_tol: DEFAULT_PICARD_TOL,
            picard_max_iters: DEFAULT_PICARD_MAX_ITERS,
            basis_degree: DEFAULT_BASIS_DEGREE,
            n_store: 64,
        }
    }
}

impl NumericsConfig {
    pub fn picard(&self) -> PicardSettings {
        PicardSettings { tol: self.picard_tol, max_iters: self.picard_max_iters }
    }

    pub fn regression(&self) -> RegressionSettings {
        RegressionSettings { n_paths: self.n_paths, basis_degree: self.basis_degree, seed: self.seed, n_store: self.n_store }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub theorems: Vec<TheoremId>,
    pub restarts: usize,
    pub ladder_steps: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { theorems: TheoremId::ALL.to_vec(), restarts: 4, ladder_steps: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderConfig {
    pub gamma: f64,
    pub n_list: Vec<f64>,
    pub terminal: TerminalSpec,
    pub grid_points: usize,
    pub v_max: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            n_list: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            terminal: TerminalSpec::Tanh { weights: vec![12.5], amplitude: 3.0, offset: 0.0 },
            grid_points: 4001,
            v_max: 76.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleConfig {
    pub n_paths: usize,
    pub wealth_steps: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<String>,
}

impl OutputConfig {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub model: ModelConfig,
    pub constraint: ConstraintKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    pub numerics: NumericsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleConfig>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// SHA-256 of the resolved configuration without its output block, so
    /// that the same experiment written to two directories shares a hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        v.as_object_mut().expect("object").remove("output");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn constraint_set(&self) -> qbsde::Result<ConstraintSet> {
        ConstraintSet::new(self.constraint.clone(), self.model.d)
    }
}

/// Parses and validates a configuration document.
pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<Issue>> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| vec![Issue { path: "$".into(), message: format!("not valid JSON: {e}") }])?;
    let mut v = Validator::default();
    let cfg = v.root(&root);
    match cfg {
        Some(cfg) if v.issues.is_empty() => Ok(cfg),
        _ => Err(v.issues),
    }
}

#[derive(Default)]
struct Validator {
    issues: Vec<Issue>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Validator {
    fn issue(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue { path: path.into(), message: message.into() });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.issue(if path.is_empty() { "$" } else { path }, "expected an object");
            return None;
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.issue(join(path, key), "unknown key");
            }
        }
        Some(obj)
    }

    fn number(&mut self, obj: &Map<String, Value>, path: &str, key: &str, check: impl Fn(f64) -> Result<(), String>) -> Option<f64> {
        let v = obj.get(key)?;
        let p = join(path, key);
        match v.as_f64() {
            Some(x) => match check(x) {
                Ok(()) => Some(x),
                Err(msg) => {
                    self.issue(p, msg);
                    None
                }
            },
            None => {
                self.issue(p, "expected a number");
                None
            }
        }
    }

    fn integer(&mut self, obj: &Map<String, Value>, path: &str, key: &str, min: u64) -> Option<u64> {
        let v = obj.get(key)?;
        let p = join(path, key);
        match v.as_u64() {
            Some(x) if x >= min => Some(x),
            Some(_) => {
                self.issue(p, format!("must be at least {min}"));
                None
            }
            None => {
                self.issue(p, "expected a non-negative integer");
                None
            }
        }
    }

    fn required<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.issue(join(path, key), "missing required key");
        }
        v
    }

    fn typed<T: DeserializeOwned>(&mut self, v: &Value, path: &str) -> Option<T> {
        match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.issue(path, e.to_string());
                None
            }
        }
    }

    fn float_vec(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let arr = v.as_array().filter(|a| a.iter().all(|x| x.as_f64().is_some()));
        match arr {
            Some(a) => Some(a.iter().map(|x| x.as_f64().expect("checked")).collect()),
            None => {
                self.issue(path, "expected an array of numbers");
                None
            }
        }
    }

    fn terminal(&mut self, v: &Value, path: &str, d: Option<usize>) -> Option<TerminalSpec> {
        let spec: TerminalSpec = self.typed(v, path)?;
        if let Some(d) = d {
            if let Err(e) = qbsde::Terminal::from_spec(&spec, d) {
                self.issue(path, e.to_string());
                return None;
            }
        }
        Some(spec)
    }

    fn root(&mut self, root: &Value) -> Option<ExperimentConfig> {
        let obj = self.object(
            root,
            "",
            &["command", "model", "constraint", "utility", "generator", "numerics", "verify", "ladder", "martingale", "output"],
        )?;
        let command: Option<Command> = self.required(obj, "", "command").and_then(|v| self.typed(v, "command"));

        let needs_model = matches!(command, Some(Command::Solve | Command::Maximize));
        let model = match obj.get("model") {
            Some(v) => self.model(v),
            None if needs_model => {
                self.issue("model", "missing required key");
                None
            }
            None => Some(ModelConfig::unit()),
        };
        let d = model.as_ref().map(|m| m.d);

        let constraint = match obj.get("constraint") {
            Some(v) => self.constraint(v, d),
            None => Some(ConstraintKind::FullSpace {}),
        };
        let utility = obj.get("utility").map(|v| self.utility(v, d));
        let generator = obj.get("generator").map(|v| self.generator(v, d));
        let numerics = match obj.get("numerics") {
            Some(v) => self.numerics(v),
            None => Some(NumericsConfig::default()),
        };
        let verify = obj.get("verify").map(|v| self.verify(v));
        let ladder = obj.get("ladder").map(|v| self.ladder(v));
        let martingale = obj.get("martingale").map(|v| self.martingale(v, numerics.as_ref()));
        let output = match obj.get("output") {
            Some(v) => self.output(v),
            None => Some(OutputConfig { directory: "out".into(), formats: vec!["json".into(), "csv".into()] }),
        };

        // Cross-section requirements.
        match command {
            Some(Command::Solve) => {
                if utility.is_none() && generator.is_none() {
                    self.issue("generator", "solve needs a generator block or a utility block");
                }
            }
            Some(Command::Maximize) => {
                if utility.is_none() {
                    self.issue("utility", "missing required key");
                }
                if generator.is_some() {
                    self.issue("generator", "maximize derives its generator from the utility block");
                }
            }
            _ => {}
        }
        if martingale.is_some() && command != Some(Command::Maximize) {
            self.issue("martingale", "only used by the maximize command");
        }
        if let (Some(n), Some(d)) = (&numerics, d) {
            if n.backend == Backend::Lattice && d != 1 {
                self.issue("numerics.backend", "the lattice backend needs model.d = 1");
            }
        }
        if command == Some(Command::Ladder) && d.is_some_and(|d| d != 1) {
            self.issue("model.d", "the ladder runs in dimension 1");
        }

        let verify = match (command, verify) {
            (_, Some(v)) => Some(v?),
            (Some(Command::Verify), None) => Some(VerifyConfig::default()),
            _ => None,
        };
        let ladder = match (command, ladder) {
            (_, Some(l)) => Some(l?),
            (Some(Command::Ladder), None) => Some(LadderConfig::default()),
            _ => None,
        };
        let martingale = match martingale {
            Some(m) => Some(m?),
            None => None,
        };
        let utility = match utility {
            Some(u) => Some(u?),
            None => None,
        };
        let generator = match generator {
            Some(g) => Some(g?),
            None => None,
        };
        Some(ExperimentConfig {
            command: command?,
            model: model?,
            constraint: constraint?,
            utility,
            generator,
            numerics: numerics?,
            verify,
            ladder,
            martingale,
            output: output?,
        })
    }

    fn model(&mut self, v: &Value) -> Option<ModelConfig> {
        let p = "model";
        let obj = self.object(v, p, &["d", "m", "lambda", "T", "a_lambda"])?;
        let d = self.required(obj, p, "d").and(self.integer(obj, p, "d", 1)).map(|d| d as usize);
        let horizon = self.required(obj, p, "T").and(self.number(obj, p, "T", |t| {
            if t.is_finite() && t > 0.0 {
                Ok(())
            } else {
                Err("must be positive".into())
            }
        }));
        let a_lambda = self.number(obj, p, "a_lambda", |a| if a >= 0.0 { Ok(()) } else { Err("must be non-negative".into()) });
        let m = self.required(obj, p, "m").and_then(|m| {
            let rows: Option<Vec<Vec<f64>>> = match m.as_array() {
                Some(rows) => rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| self.float_vec(r, &format!("model.m[{i}]")))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect(),
                None => {
                    self.issue("model.m", "expected an array of rows");
                    None
                }
            };
            rows
        });
        let lambda = self.required(obj, p, "lambda").and_then(|l| self.float_vec(l, "model.lambda"));
        let d = d?;
        if let Some(m) = &m {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                self.issue("model.m", format!("must be a {d} x {d} matrix"));
                return None;
            }
        }
        if let Some(l) = &lambda {
            if l.len() != d {
                self.issue("model.lambda", format!("must have {d} entries"));
                return None;
            }
        }
        let cfg = ModelConfig { d, m: m?, lambda: lambda?, horizon: horizon?, a_lambda };
        if let Err(e) = cfg.build() {
            self.issue("model.m", e.to_string());
            return None;
        }
        Some(cfg)
    }

    fn constraint(&mut self, v: &Value, d: Option<usize>) -> Option<ConstraintKind> {
        let kind: ConstraintKind = self.typed(v, "constraint")?;
        if let Some(d) = d {
            if let Err(e) = ConstraintSet::new(kind.clone(), d) {
                self.issue("constraint", e.to_string());
                return None;
            }
        }
        Some(kind)
    }

    fn utility(&mut self, v: &Value, d: Option<usize>) -> Option<UtilityConfig> {
        let p = "utility";
        let obj = self.object(v, p, &["kind", "alpha", "gamma_u", "B", "x"])?;
        let kind = self.required(obj, p, "kind").and_then(|k| match k.as_str() {
            Some(s @ ("exponential" | "power" | "log")) => Some(s.to_string()),
            _ => {
                self.issue("utility.kind", "expected one of exponential, power, log");
                None
            }
        });
        let alpha = self.number(obj, p, "alpha", |a| {
            if a.is_finite() && a > 0.0 {
                Ok(())
            } else {
                Err(format!("must be positive, got {a}"))
            }
        });
        let gamma_u = self.number(obj, p, "gamma_u", |g| {
            if g > 0.0 && g < 1.0 {
                Ok(())
            } else {
                Err(format!("must lie in (0, 1), got {g}"))
            }
        });
        let liability = match obj.get("B") {
            Some(b) => self.terminal(b, "utility.B", d),
            None => Some(TerminalSpec::Zero {}),
        };
        let x = self.required(obj, p, "x").and(self.number(obj, p, "x", |x| {
            if x.is_finite() {
                Ok(())
            } else {
                Err("must be finite".into())
            }
        }));
        let kind = kind?;
        match kind.as_str() {
            "exponential" => {
                if !obj.contains_key("alpha") {
                    self.issue("utility.alpha", "missing required key");
                }
                if obj.contains_key("gamma_u") {
                    self.issue("utility.gamma_u", "only used by the power utility");
                }
            }
            other => {
                if obj.contains_key("alpha") {
                    self.issue("utility.alpha", "only used by the exponential utility");
                }
                if other == "power" && !obj.contains_key("gamma_u") {
                    self.issue("utility.gamma_u", "missing required key");
                }
                if other == "log" && obj.contains_key("gamma_u") {
                    self.issue("utility.gamma_u", "only used by the power utility");
                }
                if x.is_some_and(|x| x <= 0.0) {
                    self.issue("utility.x", "must be positive for power and log utilities");
                }
                if liability.as_ref().is_some_and(|b| !b.is_zero()) {
                    self.issue("utility.B", "power and log utilities take no liability");
                }
            }
        }
        Some(UtilityConfig { kind, alpha, gamma_u, liability: liability?, x: x? })
    }

    fn generator(&mut self, v: &Value, d: Option<usize>) -> Option<GeneratorConfig> {
        let p = "generator";
        let obj = self.object(v, p, &["constant", "linear_y", "linear_z", "quadratic_z", "beta", "terminal"])?;
        let finite = |x: f64| if x.is_finite() { Ok(()) } else { Err("must be finite".to_string()) };
        let constant = self.number(obj, p, "constant", finite);
        let linear_y = self.number(obj, p, "linear_y", finite);
        let quadratic_z = self.number(obj, p, "quadratic_z", |q| {
            if q.is_finite() && q >= 0.0 {
                Ok(())
            } else {
                Err("must be non-negative".into())
            }
        });
        let beta = self.number(obj, p, "beta", finite);
        let linear_z = obj.get("linear_z").and_then(|l| self.float_vec(l, "generator.linear_z"));
        if let (Some(l), Some(d)) = (&linear_z, d) {
            if l.len() != d {
                self.issue("generator.linear_z", format!("must have {d} entries"));
            }
        }
        let terminal = match obj.get("terminal") {
            Some(t) => self.terminal(t, "generator.terminal", d),
            None => Some(TerminalSpec::Zero {}),
        };
        let driver = CustomDriver {
            constant: constant.unwrap_or(0.0),
            linear_y: linear_y.unwrap_or(0.0),
            linear_z,
            quadratic_z: quadratic_z.unwrap_or(0.0),
            beta: beta.unwrap_or(0.0),
        };
        Some(GeneratorConfig { driver, terminal: terminal? })
    }

    fn numerics(&mut self, v: &Value) -> Option<NumericsConfig> {
        let p = "numerics";
        let obj = self.object(
            v,
            p,
            &["backend", "n_steps", "n_paths", "seed", "picard_tol", "picard_max_iters", "basis_degree", "n_store"],
        )?;
        let mut n = NumericsConfig::default();
        let mut ok = true;
        if let Some(b) = obj.get("backend") {
            match self.typed::<Backend>(b, "numerics.backend") {
                Some(b) => n.backend = b,
                None => ok = false,
            }
        }
        let mut int = |this: &mut Self, key: &str, min: u64, slot: &mut usize| {
            if obj.contains_key(key) {
                match this.integer(obj, p, key, min) {
                    Some(x) => *slot = x as usize,
                    None => ok = false,
                }
            }
        };
        int(self, "n_steps", 1, &mut n.n_steps);
        int(self, "n_paths", 100, &mut n.n_paths);
        int(self, "picard_max_iters", 1, &mut n.picard_max_iters);
        int(self, "basis_degree", 0, &mut n.basis_degree);
        int(self, "n_store", 0, &mut n.n_store);
        if obj.contains_key("seed") {
            match self.integer(obj, p, "seed", 0) {
                Some(s) => n.seed = s,
                None => ok = false,
            }
        }
        if obj.contains_key("picard_tol") {
            match self.number(obj, p, "picard_tol", |t| if t > 0.0 && t.is_finite() { Ok(()) } else { Err("must be positive".into()) }) {
                Some(t) => n.picard_tol = t,
                None => ok = false,
            }
        }
        if n.basis_degree > 8 {
            self.issue("numerics.basis_degree", "must be at most 8");
            ok = false;
        }
        ok.then_some(n)
    }

    fn verify(&mut self, v: &Value) -> Option<VerifyConfig> {
        let p = "verify";
        let obj = self.object(v, p, &["theorems", "restarts", "ladder_steps"])?;
        let mut cfg = VerifyConfig::default();
        let mut ok = true;
        if let Some(t) = obj.get("theorems") {
            match self.typed::<Vec<TheoremId>>(t, "verify.theorems") {
                Some(ids) if ids.is_empty() => {
                    self.issue("verify.theorems", "must list at least one theorem id");
                    ok = false;
                }
                Some(mut ids) => {
                    let n = ids.len();
                    ids.sort();
                    ids.dedup();
                    if ids.len() != n {
                        self.issue("verify.theorems", "duplicate theorem id");
                        ok = false;
                    }
                    cfg.theorems = ids;
                }
                None => ok = false,
            }
        }
        if obj.contains_key("restarts") {
            match self.integer(obj, p, "restarts", 2) {
                Some(r) => cfg.restarts = r as usize,
                None => ok = false,
            }
        }
        if obj.contains_key("ladder_steps") {
            match self.integer(obj, p, "ladder_steps", 1) {
                Some(r) => cfg.ladder_steps = r as usize,
                None => ok = false,
            }
        }
        ok.then_some(cfg)
    }

    fn ladder(&mut self, v: &Value) -> Option<LadderConfig> {
        let p = "ladder";
        let obj = self.object(v, p, &["gamma", "n_list", "terminal", "grid_points", "v_max"])?;
        let mut cfg = LadderConfig::default();
        let mut ok = true;
        if obj.contains_key("gamma") {
            match self.number(obj, p, "gamma", |g| if g > 0.0 && g.is_finite() { Ok(()) } else { Err("must be positive".into()) }) {
                Some(g) => cfg.gamma = g,
                None => ok = false,
            }
        }
        if obj.contains_key("v_max") {
            match self.number(obj, p, "v_max", |g| if g > 0.0 && g.is_finite() { Ok(()) } else { Err("must be positive".into()) }) {
                Some(g) => cfg.v_max = g,
                None => ok = false,
            }
        }
        if let Some(l) = obj.get("n_list") {
            match self.float_vec(l, "ladder.n_list") {
                Some(l) if l.len() >= 2 && l[0] > 0.0 && l.windows(2).all(|w| w[0] < w[1]) => cfg.n_list = l,
                Some(_) => {
                    self.issue("ladder.n_list", "must hold at least two positive, strictly increasing values");
                    ok = false;
                }
                None => ok = false,
            }
        }
        if obj.contains_key("grid_points") {
            match self.integer(obj, p, "grid_points", 3) {
                Some(g) => cfg.grid_points = g as usize,
                None => ok = false,
            }
        }
        if let Some(t) = obj.get("terminal") {
            match self.terminal(t, "ladder.terminal", Some(1)) {
                Some(t) => cfg.terminal = t,
                None => ok = false,
            }
        }
        ok.then_some(cfg)
    }

    fn martingale(&mut self, v: &Value, numerics: Option<&NumericsConfig>) -> Option<MartingaleConfig> {
        let p = "martingale";
        let obj = self.object(v, p, &["n_paths", "wealth_steps", "delta"])?;
        let mut cfg = MartingaleConfig {
            n_paths: numerics.map_or(DEFAULT_N_PATHS, |n| n.n_paths),
            wealth_steps: 200,
            delta: 0.5,
        };
        let mut ok = true;
        if obj.contains_key("n_paths") {
            match self.integer(obj, p, "n_paths", 30) {
                Some(n) => cfg.n_paths = n as usize,
                None => ok = false,
            }
        }
        if obj.contains_key("wealth_steps") {
            match self.integer(obj, p, "wealth_steps", 2) {
                Some(n) if n % 2 == 0 => cfg.wealth_steps = n as usize,
                Some(_) => {
                    self.issue("martingale.wealth_steps", "must be even");
                    ok = false;
                }
                None => ok = false,
            }
        }
        if obj.contains_key("delta") {
            match self.number(obj, p, "delta", |d| if d >= 0.0 && d.is_finite() { Ok(()) } else { Err("must be non-negative".into()) }) {
                Some(d) => cfg.delta = d,
                None => ok = false,
            }
        }
        ok.then_some(cfg)
    }

    fn output(&mut self, v: &Value) -> Option<OutputConfig> {
        let p = "output";
        let obj = self.object(v, p, &["directory", "formats"])?;
        let directory = match obj.get("directory") {
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            Some(_) => {
                self.issue("output.directory", "expected a non-empty string");
                None
            }
            None => Some("out".into()),
        };
        let formats = match obj.get("formats") {
            Some(f) => match f.as_array().map(|a| a.iter().map(|x| x.as_str()).collect::<Option<Vec<_>>>()) {
                Some(Some(list)) if !list.is_empty() && list.iter().all(|s| matches!(*s, "json" | "csv")) => {
                    Some(list.into_iter().map(String::from).collect())
                }
                _ => {
                    self.issue("output.formats", "expected a non-empty subset of [\"json\", \"csv\"]");
                    None
                }
            },
            None => Some(vec!["json".into(), "csv".into()]),
        };
        Some(OutputConfig { directory: directory?, formats: formats? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(text: &str) -> Vec<String> {
        parse(text).unwrap_err().into_iter().map(|i| i.path).collect()
    }

    const LOG: &str = r#"{
        "command": "maximize",
        "model": {"d": 1, "m": [[0.3]], "lambda": [0.888], "T": 1.0},
        "utility": {"kind": "log", "x": 1.0}
    }"#;

    #[test]
    fn defaults_are_filled() {
        let cfg = parse(LOG).unwrap();
        assert_eq!(cfg.numerics, NumericsConfig::default());
        assert_eq!(cfg.constraint, ConstraintKind::FullSpace {});
        assert_eq!(cfg.output.directory, "out");
        assert_eq!(cfg.numerics.n_steps, 400);
        assert_eq!(cfg.numerics.n_paths, 100_000);
    }

    #[test]
    fn negative_alpha_points_at_the_key() {
        let text = LOG.replace(r#""kind": "log""#, r#""kind": "exponential", "alpha": -1"#);
        assert_eq!(paths(&text), vec!["utility.alpha"]);
    }

    #[test]
    fn every_offending_path_is_listed() {
        let text = r#"{
            "command": "maximize",
            "model": {"d": 1, "m": [[0.3]], "lambda": [0.5], "T": -1, "extra": 1},
            "utility": {"kind": "power", "gamma_u": 1.5, "x": 1},
            "numerics": {"n_steps": 0}
        }"#;
        let p = paths(text);
        for want in ["model.extra", "model.T", "utility.gamma_u", "numerics.n_steps"] {
            assert!(p.contains(&want.to_string()), "{p:?} lacks {want}");
        }
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        let text = LOG.replace(r#""x": 1.0"#, r#""x": 1.0, "gamma": 2"#).replace(r#""command""#, r#""colour": 1, "command""#);
        let p = paths(&text);
        assert!(p.contains(&"utility.gamma".to_string()) && p.contains(&"colour".to_string()), "{p:?}");
        let nested = LOG.replace(r#""utility""#, r#""constraint": {"kind": "box", "lower": [0], "upper": [1], "x": 1}, "utility""#);
        assert_eq!(paths(&nested), vec!["constraint"]);
    }

    #[test]
    fn lattice_needs_one_dimension() {
        let text = r#"{
            "command": "maximize",
            "model": {"d": 2, "m": [[1, 0], [0, 1]], "lambda": [0.1, 0.2], "T": 1},
            "utility": {"kind": "log", "x": 1}
        }"#;
        assert_eq!(paths(text), vec!["numerics.backend"]);
    }

    #[test]
    fn singular_volatility_rejected() {
        let text = LOG.replace("[[0.3]]", "[[0.0]]");
        assert_eq!(paths(&text), vec!["model.m"]);
    }

    #[test]
    fn hash_ignores_output_block() {
        let a = parse(LOG).unwrap();
        let mut b = a.clone();
        b.output.directory = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.numerics.seed = 2;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn verify_defaults_to_all_theorems() {
        let cfg = parse(r#"{"command": "verify"}"#).unwrap();
        assert_eq!(cfg.verify.unwrap().theorems, TheoremId::ALL.to_vec());
        assert_eq!(paths(r#"{"command": "verify", "verify": {"theorems": ["nope"]}}"#), vec!["verify.theorems"]);
    }

    #[test]
    fn ladder_list_must_increase() {
        assert_eq!(paths(r#"{"command": "ladder", "ladder": {"n_list": [4, 2]}}"#), vec!["ladder.n_list"]);
    }
}
