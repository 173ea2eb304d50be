//! Experiment configuration: strict JSON, unknown keys rejected, every
//! numeric field range-checked after parsing.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use smoothed_ftpl::planning::PlanLoss;
use smoothed_ftpl::pwa_env::Link;
use smoothed_ftpl::smoothing::{MeanPolicy, NoiseLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label for the `env` CSV column; defaults to the environment kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub environment: EnvironmentConfig,
    pub adversary: AdversaryConfig,
    pub learner: LearnerConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    /// `I[y != sign(x - theta)]` with `theta` in `[lower, upper]`.
    Threshold {
        #[serde(default)]
        lower: f64,
        #[serde(default = "one")]
        upper: f64,
    },
    PwaTournament {
        modes: usize,
        context_dim: usize,
        mode_losses: Vec<ModeLossConfig>,
        #[serde(default)]
        link: Link,
        #[serde(default = "one")]
        param_bound: f64,
    },
    PwaMargin {
        modes: usize,
        context_dim: usize,
        mode_losses: Vec<ModeLossConfig>,
        #[serde(default)]
        link: Link,
        #[serde(default = "one")]
        param_bound: f64,
        margin: f64,
    },
    Polynomial {
        modes: usize,
        context_dim: usize,
        mode_losses: Vec<ModeLossConfig>,
        degree: u32,
        /// Anti-concentration constant assumed of the adversary.
        sigma_poly: f64,
        #[serde(default = "one")]
        param_bound: f64,
    },
    /// The 1-D two-mode line `x' = x + |u|` over `horizon` steps.
    Planning {
        horizon: usize,
        u_max: f64,
        diameter: f64,
        lipschitz: f64,
        loss: PlanLoss,
    },
}

impl EnvironmentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvironmentConfig::Threshold { .. } => "threshold",
            EnvironmentConfig::PwaTournament { .. } => "pwa_tournament",
            EnvironmentConfig::PwaMargin { .. } => "pwa_margin",
            EnvironmentConfig::Polynomial { .. } => "polynomial",
            EnvironmentConfig::Planning { .. } => "planning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeLossConfig {
    ClippedSquaredError { out_dim: usize },
    ZeroOne { label: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryConfig {
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default)]
        labeler: LabelerConfig,
    },
    MeanShift {
        lower: Vec<f64>,
        upper: Vec<f64>,
        width: f64,
        #[serde(default = "uniform_noise")]
        noise: NoiseLaw,
        policy: MeanPolicy,
        #[serde(default)]
        labeler: LabelerConfig,
    },
    GreedyMeanShift {
        lower: Vec<f64>,
        upper: Vec<f64>,
        width: f64,
        grid: usize,
        #[serde(default)]
        labeler: LabelerConfig,
    },
    /// Input and dynamics noise for the planning environment.
    PlanningNoise {
        #[serde(default = "origin")]
        x1: Vec<f64>,
        width: f64,
        #[serde(default = "uniform_noise")]
        noise: NoiseLaw,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelerConfig {
    #[default]
    None,
    Threshold { cut: f64, flip_prob: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    LazyFtplExpo,
    LazyFtplGp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    /// Explicit `eta`; tuned from the environment when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Explicit epoch length; tuned when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Anchor count for the Gaussian-process perturbation.
    #[serde(default = "default_anchors")]
    pub gp_anchors: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    #[default]
    Auto,
    ExactThreshold,
    Grid {
        mesh: usize,
        #[serde(default = "yes")]
        cached: bool,
    },
    Alternating {
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_iters")]
        max_iters: usize,
        #[serde(default = "default_line_mesh")]
        line_mesh: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Horizons; a single number is accepted.
    #[serde(rename = "T", deserialize_with = "one_or_many")]
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_epsilons")]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Parameter pairs probed by the isometry, mode-flip and concentration checks.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Largest per-coordinate offset between the two members of a pair.
    #[serde(default = "default_pair_scale")]
    pub pair_scale: f64,
    /// Replaces the theoretical constant in the isometry and mode-flip bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilons(),
            n_mc: default_n_mc(),
            pairs: default_pairs(),
            pair_scale: default_pair_scale(),
            alpha: None,
            n: default_n(),
            delta: default_delta(),
            trials: default_trials(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn origin() -> Vec<f64> {
    vec![0.0]
}
fn uniform_noise() -> NoiseLaw {
    NoiseLaw::Uniform
}
fn default_anchors() -> usize {
    16
}
fn default_restarts() -> usize {
    4
}
fn default_iters() -> usize {
    50
}
fn default_line_mesh() -> usize {
    21
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}
fn default_epsilons() -> Vec<f64> {
    vec![0.1]
}
fn default_n_mc() -> usize {
    2000
}
fn default_pairs() -> usize {
    20
}
fn default_pair_scale() -> f64 {
    0.05
}
fn default_n() -> usize {
    200
}
fn default_delta() -> f64 {
    0.05
}
fn default_trials() -> usize {
    100
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(ts) => ts,
    })
}

/// A rejected configuration, with the offending field and, for syntax and
/// type errors, the position in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: ")?,
            _ => {}
        }
        if self.field.is_empty() || self.field == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let inner = e.inner();
            ConfigError {
                field: e.path().to_string(),
                line: Some(inner.line()),
                column: Some(inner.column()),
                message: inner.to_string(),
            }
        })?;
        de.end().map_err(|e| ConfigError {
            field: String::new(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            ConfigError::field(e.path().to_string(), e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::field("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn env_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.environment.kind().to_string())
    }

    /// Range checks that the type system cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut c = Checker::default();
        self.check_environment(&mut c);
        self.check_adversary(&mut c);
        self.check_learner(&mut c);

        c.require(!self.run.horizons.is_empty(), "run.T", "needs at least one horizon");
        for (i, t) in self.run.horizons.iter().enumerate() {
            c.require(*t >= 1, &format!("run.T[{i}]"), "must be at least 1");
        }
        c.require(!self.run.seeds.is_empty(), "run.seeds", "needs at least one seed");
        c.require(!self.output.formats.is_empty(), "output.formats", "needs at least one format");

        let v = &self.verify;
        c.require(!v.epsilon.is_empty(), "verify.epsilon", "needs at least one value");
        for (i, e) in v.epsilon.iter().enumerate() {
            c.positive(&format!("verify.epsilon[{i}]"), *e);
        }
        c.require(v.n_mc >= 1, "verify.n_mc", "must be at least 1");
        c.require(v.pairs >= 1, "verify.pairs", "must be at least 1");
        c.positive("verify.pair_scale", v.pair_scale);
        if let Some(alpha) = v.alpha {
            c.require(alpha.is_finite() && alpha >= 0.0, "verify.alpha", "must be finite and nonnegative");
        }
        c.require(v.delta > 0.0 && v.delta < 1.0, "verify.delta", "must lie in (0, 1)");
        c.require(v.trials >= 1, "verify.trials", "must be at least 1");
        c.finish()
    }

    fn check_environment(&self, c: &mut Checker) {
        match &self.environment {
            EnvironmentConfig::Threshold { lower, upper } => {
                c.require(
                    lower.is_finite() && upper.is_finite() && lower < upper,
                    "environment.upper",
                    "need finite lower < upper",
                );
            }
            EnvironmentConfig::PwaTournament {
                modes,
                context_dim,
                mode_losses,
                param_bound,
                ..
            }
            | EnvironmentConfig::PwaMargin {
                modes,
                context_dim,
                mode_losses,
                param_bound,
                ..
            }
            | EnvironmentConfig::Polynomial {
                modes,
                context_dim,
                mode_losses,
                param_bound,
                ..
            } => {
                c.require(*modes >= 1, "environment.modes", "must be at least 1");
                c.require(*context_dim >= 1, "environment.context_dim", "must be at least 1");
                c.require(
                    mode_losses.len() == *modes,
                    "environment.mode_losses",
                    &format!("has {} entries for {modes} modes", mode_losses.len()),
                );
                c.positive("environment.param_bound", *param_bound);
                for (i, m) in mode_losses.iter().enumerate() {
                    let field = format!("environment.mode_losses[{i}]");
                    match m {
                        ModeLossConfig::ClippedSquaredError { out_dim } => {
                            c.require(*out_dim >= 1, &field, "out_dim must be at least 1")
                        }
                        ModeLossConfig::ZeroOne { label } => c.finite(&field, *label),
                        ModeLossConfig::Constant { value } => c.require(
                            (0.0..=1.0).contains(value),
                            &field,
                            "value must lie in [0, 1]",
                        ),
                    }
                }
                if let EnvironmentConfig::PwaMargin { margin, .. } = &self.environment {
                    c.positive("environment.margin", *margin);
                }
                if let EnvironmentConfig::Polynomial {
                    degree, sigma_poly, ..
                } = &self.environment
                {
                    c.require(*degree >= 1, "environment.degree", "must be at least 1");
                    c.positive("environment.sigma_poly", *sigma_poly);
                }
            }
            EnvironmentConfig::Planning {
                horizon,
                u_max,
                diameter,
                lipschitz,
                ..
            } => {
                c.require(*horizon >= 1, "environment.horizon", "must be at least 1");
                c.positive("environment.u_max", *u_max);
                c.positive("environment.diameter", *diameter);
                c.positive("environment.lipschitz", *lipschitz);
            }
        }
    }

    fn check_adversary(&self, c: &mut Checker) {
        let planning = matches!(self.environment, EnvironmentConfig::Planning { .. });
        let check_box = |c: &mut Checker, lower: &[f64], upper: &[f64]| {
            c.require(!lower.is_empty(), "adversary.lower", "must not be empty");
            c.require(
                lower.len() == upper.len(),
                "adversary.upper",
                "must have the same length as lower",
            );
            for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
                c.require(
                    lo.is_finite() && hi.is_finite() && lo < hi,
                    &format!("adversary.upper[{i}]"),
                    "need finite lower < upper",
                );
            }
        };
        let check_labeler = |c: &mut Checker, labeler: &LabelerConfig| {
            if let LabelerConfig::Threshold { cut, flip_prob } = labeler {
                c.finite("adversary.labeler.cut", *cut);
                c.require(
                    (0.0..=1.0).contains(flip_prob),
                    "adversary.labeler.flip_prob",
                    "must lie in [0, 1]",
                );
            }
        };
        match &self.adversary {
            AdversaryConfig::UniformBox {
                lower,
                upper,
                labeler,
            } => {
                check_box(c, lower, upper);
                check_labeler(c, labeler);
            }
            AdversaryConfig::MeanShift {
                lower,
                upper,
                width,
                labeler,
                ..
            } => {
                check_box(c, lower, upper);
                c.positive("adversary.width", *width);
                check_labeler(c, labeler);
            }
            AdversaryConfig::GreedyMeanShift {
                lower,
                upper,
                width,
                grid,
                labeler,
            } => {
                check_box(c, lower, upper);
                c.positive("adversary.width", *width);
                c.require(*grid >= 2, "adversary.grid", "must be at least 2");
                check_labeler(c, labeler);
            }
            AdversaryConfig::PlanningNoise { x1, width, .. } => {
                c.positive("adversary.width", *width);
                for (i, x) in x1.iter().enumerate() {
                    c.finite(&format!("adversary.x1[{i}]"), *x);
                }
            }
        }
        let is_noise = matches!(self.adversary, AdversaryConfig::PlanningNoise { .. });
        c.require(
            planning == is_noise,
            "adversary.kind",
            "planning environments take exactly the planning_noise adversary",
        );
    }

    fn check_learner(&self, c: &mut Checker) {
        let l = &self.learner;
        if let Some(eta) = l.eta {
            c.require(eta.is_finite() && eta >= 0.0, "learner.eta", "must be finite and nonnegative");
        }
        if let Some(n) = l.n {
            c.require(n >= 1, "learner.n", "must be at least 1");
        }
        c.require(l.gp_anchors >= 1, "learner.gp_anchors", "must be at least 1");
        match l.solver {
            SolverConfig::Grid { mesh, .. } => {
                c.require(mesh >= 2, "learner.solver.mesh", "must be at least 2")
            }
            SolverConfig::Alternating {
                restarts,
                max_iters,
                line_mesh,
            } => {
                c.require(restarts >= 1, "learner.solver.restarts", "must be at least 1");
                c.require(max_iters >= 1, "learner.solver.max_iters", "must be at least 1");
                c.require(line_mesh >= 2, "learner.solver.line_mesh", "must be at least 2");
            }
            SolverConfig::Auto | SolverConfig::ExactThreshold => {}
        }
    }
}

#[derive(Default)]
struct Checker {
    first: Option<ConfigError>,
}

impl Checker {
    fn require(&mut self, ok: bool, field: &str, message: &str) {
        if !ok && self.first.is_none() {
            self.first = Some(ConfigError::field(field, message));
        }
    }

    fn positive(&mut self, field: &str, v: f64) {
        self.require(v.is_finite() && v > 0.0, field, &format!("{v} must be finite and positive"));
    }

    fn finite(&mut self, field: &str, v: f64) {
        self.require(v.is_finite(), field, &format!("{v} must be finite"));
    }

    fn finish(self) -> Result<(), ConfigError> {
        self.first.map_or(Ok(()), Err)
    }
}

/// Sets the value at a dotted path (`learner.eta`, `run.T`). Array indices
/// are written as numbers (`verify.epsilon.0`). The parent must exist; the
/// strict parse afterwards rejects keys the schema does not know.
pub fn set_path(
    root: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::field(path, "malformed parameter path"));
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut node = root;
    for (depth, key) in parents.iter().enumerate() {
        let missing = || ConfigError::field(parts[..=depth].join("."), "no such config entry");
        node = match node {
            serde_json::Value::Object(map) => map.get_mut(*key).ok_or_else(missing)?,
            serde_json::Value::Array(items) => key
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(missing)?,
            _ => return Err(missing()),
        };
    }
    match node {
        serde_json::Value::Object(map) => {
            // a scalar sweep value for a list-valued entry means a one-element list
            let value = match (map.get(*last), value) {
                (Some(serde_json::Value::Array(_)), v) if !v.is_array() => serde_json::Value::Array(vec![v]),
                (_, v) => v,
            };
            map.insert((*last).to_string(), value);
            Ok(())
        }
        serde_json::Value::Array(items) => {
            let slot = last
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| ConfigError::field(path, "no such config entry"))?;
            *slot = value;
            Ok(())
        }
        _ => Err(ConfigError::field(path, "parent is not an object")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const THRESHOLD: &str = r#"{
        "environment": {"kind": "threshold"},
        "adversary": {"kind": "uniform_box", "lower": [0], "upper": [1],
                      "labeler": {"kind": "threshold", "cut": 0.4, "flip_prob": 0.1}},
        "learner": {"algorithm": "lazy_ftpl_expo"},
        "run": {"T": [10], "seeds": [1]}
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_json(THRESHOLD).unwrap();
        assert_eq!(cfg.run.horizons, vec![10]);
        assert_eq!(cfg.env_name(), "threshold");
        let once = serde_json::to_value(&cfg).unwrap();
        let again = serde_json::to_value(ExperimentConfig::from_value(once.clone()).unwrap()).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn scalar_horizon_is_a_list() {
        let text = THRESHOLD.replace("\"T\": [10]", "\"T\": 25");
        assert_eq!(ExperimentConfig::from_json(&text).unwrap().run.horizons, vec![25]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = THRESHOLD.replace("\"seeds\": [1]", "\"seeds\": [1], \"bogus\": 3");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(err.field, "run.bogus");
        assert_eq!(err.line, Some(6));
        assert!(err.message.contains("bogus"));

        let text = THRESHOLD.replace("\"kind\": \"threshold\"}", "\"kind\": \"threshold\", \"cutoff\": 1}");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn range_checks_name_the_field() {
        let text = THRESHOLD.replace("\"flip_prob\": 0.1", "\"flip_prob\": 1.5");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(err.field, "adversary.labeler.flip_prob");

        let text = THRESHOLD.replace("\"T\": [10]", "\"T\": [10, 0]");
        assert_eq!(ExperimentConfig::from_json(&text).unwrap_err().field, "run.T[1]");

        let text = THRESHOLD.replace("\"seeds\": [1]", "\"seeds\": []");
        assert_eq!(ExperimentConfig::from_json(&text).unwrap_err().field, "run.seeds");
    }

    #[test]
    fn planning_needs_planning_noise() {
        let text = r#"{
            "environment": {"kind": "planning", "horizon": 2, "u_max": 0.2, "diameter": 0.7,
                            "lipschitz": 1, "loss": {"kind": "l1_norm"}},
            "adversary": {"kind": "uniform_box", "lower": [0], "upper": [1]},
            "learner": {"algorithm": "lazy_ftpl_expo"},
            "run": {"T": 10, "seeds": [0]}
        }"#;
        assert_eq!(ExperimentConfig::from_json(text).unwrap_err().field, "adversary.kind");
    }

    #[test]
    fn set_path_creates_leaf_and_rejects_missing_parent() {
        let mut v = serde_json::to_value(ExperimentConfig::from_json(THRESHOLD).unwrap()).unwrap();
        set_path(&mut v, "learner.eta", serde_json::json!(10.0)).unwrap();
        set_path(&mut v, "run.seeds", serde_json::json!(7)).unwrap();
        let cfg = ExperimentConfig::from_value(v.clone()).unwrap();
        assert_eq!(cfg.learner.eta, Some(10.0));
        assert_eq!(cfg.run.seeds, vec![7]);

        assert!(set_path(&mut v, "nothing.here", serde_json::json!(1)).is_err());
        set_path(&mut v, "learner.bogus", serde_json::json!(1)).unwrap();
        assert_eq!(ExperimentConfig::from_value(v).unwrap_err().field, "learner.bogus");
    }
}
