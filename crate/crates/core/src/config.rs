//! Declarative run configuration: a TOML document describing one scenario —
//! which model, which parameter overrides, which computation paths, what
//! time grid — validated into a [`RunConfig`] that builds its model
//! instance. Parsing, serializing, and re-parsing a config is an identity.

use crate::constants::{CLOSED_FORM_TOL, TWO_PATH_TOL, ZASSENHAUS_MAX_ORDER};
use crate::greens::SpectralDensity;
use crate::models::{
    build_model1, build_model2, build_model3, build_model4_default, build_model5, EnvWeighting,
    MeasurementCase, ModelError, ModelInstance, ModelParams, ModelTag,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config does not serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One way of producing a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PathChoice {
    Oracle,
    ClosedForm,
    /// Truncated product expansion at the given order.
    Zassenhaus(usize),
}

impl PathChoice {
    /// Stable label used in file names and comparison columns.
    pub fn label(&self) -> String {
        match self {
            PathChoice::Oracle => "oracle".into(),
            PathChoice::ClosedForm => "closedform".into(),
            PathChoice::Zassenhaus(order) => format!("zassenhaus_{order}"),
        }
    }
}

impl std::fmt::Display for PathChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathChoice::Oracle => f.write_str("oracle"),
            PathChoice::ClosedForm => f.write_str("closedform"),
            PathChoice::Zassenhaus(order) => write!(f, "zassenhaus:{order}"),
        }
    }
}

impl std::str::FromStr for PathChoice {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "oracle" => Ok(PathChoice::Oracle),
            "closedform" => Ok(PathChoice::ClosedForm),
            other => {
                if let Some(order_text) = other.strip_prefix("zassenhaus:") {
                    let order: usize = order_text.parse().map_err(|_| {
                        ConfigError::Invalid(format!(
                            "zassenhaus order `{order_text}` is not an integer"
                        ))
                    })?;
                    if !(2..=ZASSENHAUS_MAX_ORDER).contains(&order) {
                        return Err(ConfigError::Invalid(format!(
                            "zassenhaus order {order} outside 2..={ZASSENHAUS_MAX_ORDER}"
                        )));
                    }
                    Ok(PathChoice::Zassenhaus(order))
                } else {
                    Err(ConfigError::Invalid(format!(
                        "unknown path `{other}` (expected oracle, closedform, or zassenhaus:N)"
                    )))
                }
            }
        }
    }
}

impl TryFrom<String> for PathChoice {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse().map_err(|e: ConfigError| e.to_string())
    }
}

impl From<PathChoice> for String {
    fn from(p: PathChoice) -> String {
        p.to_string()
    }
}

/// Per-key overrides of the model's tuned defaults. Every field is optional;
/// an absent key keeps the per-model default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_c: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl ParamsPatch {
    pub fn apply(&self, mut base: ModelParams) -> ModelParams {
        if let Some(v) = self.omega_s {
            base.omega_s = v;
        }
        if let Some(v) = self.omega {
            base.omega = v;
        }
        if let Some(v) = self.beta {
            base.beta = v;
        }
        if let Some(v) = self.eta {
            base.eta = v;
        }
        if let Some(v) = &self.j_values {
            base.j_values = v.clone();
        }
        if let Some(v) = self.n_max {
            base.n_max = v;
        }
        if let Some(v) = self.alpha0 {
            base.alpha0 = v;
        }
        if let Some(v) = &self.epsilons {
            base.epsilons = v.clone();
        }
        if let Some(v) = &self.etas {
            base.etas = v.clone();
        }
        if let Some(v) = self.alpha_c {
            base.alpha_c = v;
        }
        if let Some(v) = &self.amplitudes {
            base.amplitudes = Some(v.clone());
        }
        if let Some(v) = &self.weights {
            base.weights = Some(v.clone());
        }
        base
    }
}

/// Comparison tolerances, overridable per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Closed form vs oracle elementwise bound before a DISCREPANCY record
    /// is emitted.
    pub closed_form: f64,
    /// Super-matrix contraction vs oracle bound.
    pub two_path: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            closed_form: CLOSED_FORM_TOL,
            two_path: TWO_PATH_TOL,
        }
    }
}

/// Level energies, bath shape, and Volterra step count for the dissipative
/// level system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model5Config {
    pub e_s: Vec<f64>,
    pub spectral: SpectralDensity,
    /// Number of solver steps over the run's time span (the output grid).
    pub n_steps: usize,
}

impl Default for Model5Config {
    fn default() -> Self {
        Self {
            e_s: vec![0.1, 0.2],
            spectral: SpectralDensity::Flat { j0: 0.2 },
            n_steps: 2000,
        }
    }
}

/// Which variant of the literal level-ladder readout a run emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model1Reading {
    /// Survival-amplitude diagonal exactly as defined; its trace falls below
    /// one as weight leaves the initially occupied configurations, and the
    /// deficit is reported rather than hidden.
    #[default]
    Literal,
    /// The same diagonal rescaled to unit trace.
    Renormalized,
}

fn default_t_end() -> f64 {
    10.0
}

fn default_n_points() -> usize {
    101
}

fn default_paths() -> Vec<PathChoice> {
    vec![PathChoice::Oracle, PathChoice::ClosedForm]
}

/// A validated scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelTag,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_paths")]
    pub paths: Vec<PathChoice>,
    /// Output directory, resolved against the output root (see the runner).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Spin-mixture weighting variant for the boson-readout model.
    #[serde(default)]
    pub weighting: EnvWeighting,
    /// Readout variant for the level-ladder model.
    #[serde(default)]
    pub model1_reading: Model1Reading,
    /// Characteristic oscillation period used for the coherence span check;
    /// absent means the model's own frequency scale, zero disables the check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_hint: Option<f64>,
    #[serde(default)]
    pub params: ParamsPatch,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub model5: Model5Config,
}

impl RunConfig {
    /// A default scenario for one model (oracle + closed form on `[0, 10]`).
    pub fn for_model(model: ModelTag) -> Self {
        Self {
            model,
            t_end: default_t_end(),
            n_points: default_n_points(),
            paths: default_paths(),
            output_dir: None,
            weighting: EnvWeighting::default(),
            model1_reading: Model1Reading::default(),
            period_hint: None,
            params: ParamsPatch::default(),
            tolerances: Tolerances::default(),
            model5: Model5Config::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.n_points < 2 {
            return Err(ConfigError::Invalid(format!(
                "n_points must be at least 2, got {}",
                self.n_points
            )));
        }
        if self.paths.is_empty() {
            return Err(ConfigError::Invalid("select at least one path".into()));
        }
        for (k, path) in self.paths.iter().enumerate() {
            if self.paths[..k].contains(path) {
                return Err(ConfigError::Invalid(format!("duplicate path `{path}`")));
            }
        }
        if self.model == ModelTag::Model5 && self.model5.n_steps == 0 {
            return Err(ConfigError::Invalid("model5.n_steps must be positive".into()));
        }
        if let Some(p) = self.period_hint {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(ConfigError::Invalid(format!(
                    "period_hint must be finite and non-negative, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// The effective parameter set: tuned per-model defaults with this
    /// config's overrides applied.
    pub fn effective_params(&self) -> ModelParams {
        self.params.apply(ModelParams::defaults_for(self.model))
    }

    pub fn build_instance(&self) -> Result<ModelInstance, ConfigError> {
        let params = self.effective_params();
        let instance = match self.model {
            ModelTag::Model1 => build_model1(&params)?,
            ModelTag::Model2 => build_model2(&params, self.weighting)?,
            ModelTag::Model3 => build_model3(&params)?,
            ModelTag::Model4a => build_model4_default(&params, MeasurementCase::A)?,
            ModelTag::Model4b => build_model4_default(&params, MeasurementCase::B)?,
            ModelTag::Model5 => {
                build_model5(&params, self.model5.e_s.clone(), self.model5.spectral.clone())?
            }
        };
        Ok(instance)
    }

    /// Uniform time grid `0 ..= t_end` with `n_points` samples.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|k| self.t_end * k as f64 / (n - 1) as f64)
            .collect()
    }

    /// The coherence span check's characteristic period: the explicit hint
    /// when given (zero disabling the check), otherwise the model's own
    /// fastest frequency scale; the gaussian-decay model has none (its
    /// window is truncation-limited, not period-limited).
    pub fn characteristic_period(&self) -> Option<f64> {
        if let Some(p) = self.period_hint {
            return (p > 0.0).then_some(p);
        }
        let params = self.effective_params();
        let tau = std::f64::consts::TAU;
        match self.model {
            ModelTag::Model1 | ModelTag::Model2 => Some(tau / params.omega_s.abs().max(1e-12)),
            ModelTag::Model3 => Some(tau / params.beta.abs().max(1e-12)),
            ModelTag::Model4a => {
                let spread = coupling_spread(&params.etas);
                Some(tau / params.beta.abs().max(spread).max(1e-12))
            }
            ModelTag::Model4b | ModelTag::Model5 => None,
        }
    }
}

fn coupling_spread(etas: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in etas {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}
