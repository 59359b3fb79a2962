use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{builtin_model, ModelSpec, ObservableKind, ScalarField, ScalarObservableSpec};
use crate::sde::Scheme;

/// Upper bound on fine steps per path.
pub const MAX_FINE_STEPS: usize = 1 << 26;

/// How the fine step is chosen for each ε.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineDtRule {
    FixedDt(f64),
    /// `dt = c ε²`.
    EpsScaled(f64),
}

impl FineDtRule {
    pub fn requested_dt(self, epsilon: f64) -> f64 {
        match self {
            FineDtRule::FixedDt(dt) => dt,
            FineDtRule::EpsScaled(c) => c * epsilon * epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKindConfig {
    Xyy,
    Yy,
}

/// `f(x,y) = x_i y_k y_l` or `y_k y_l` with `g ≡ 1`. Indices are one-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub kind: ObservableKindConfig,
    #[serde(default = "one")]
    pub i: usize,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default = "one")]
    pub l: usize,
}

fn one() -> usize {
    1
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self {
            kind: ObservableKindConfig::Xyy,
            i: 1,
            k: 1,
            l: 1,
        }
    }
}

impl ObservableConfig {
    pub fn to_spec(&self, dim: usize) -> Result<ScalarObservableSpec> {
        if self.i == 0 || self.k == 0 || self.l == 0 {
            return Err(Error::InvalidConfig(
                "observable indices are one-based".into(),
            ));
        }
        let g = ScalarField::constant(1.0);
        let spec = match self.kind {
            ObservableKindConfig::Xyy => {
                ScalarObservableSpec::xyy(self.i - 1, self.k - 1, self.l - 1, g)
            }
            ObservableKindConfig::Yy => ScalarObservableSpec::yy(self.k - 1, self.l - 1, g),
        };
        spec.validate(dim)?;
        Ok(spec)
    }

    pub fn from_spec(spec: &ScalarObservableSpec) -> Self {
        Self {
            kind: match spec.kind {
                ObservableKind::Xyy => ObservableKindConfig::Xyy,
                ObservableKind::Yy => ObservableKindConfig::Yy,
            },
            i: spec.i + 1,
            k: spec.k + 1,
            l: spec.l + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model_name: String,
    pub epsilons: Vec<f64>,
    pub fine_dt_rule: FineDtRule,
    pub coarsen: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub alpha: f64,
    pub p_moments: Vec<u32>,
    pub seed: u64,
    pub scheme: Scheme,
    pub outputs: Option<PathBuf>,
    pub observable: ObservableConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model_name: "scalar_sin".into(),
            epsilons: vec![0.5, 0.354, 0.25, 0.177, 0.125],
            fine_dt_rule: FineDtRule::EpsScaled(0.05),
            coarsen: 16,
            horizon: 1.0,
            n_paths: 100,
            alpha: 0.4,
            p_moments: vec![2],
            seed: 0,
            scheme: Scheme::ExponentialEuler,
            outputs: None,
            observable: ObservableConfig::default(),
        }
    }
}

/// The fine grid used for one ε.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineGrid {
    pub steps: usize,
    pub dt: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let model = builtin_model(&self.model_name)?;
        if self.epsilons.is_empty() {
            return bad("epsilons must not be empty".into());
        }
        if let Some(e) = self.epsilons.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
            return bad(format!("epsilon {e} outside (0, 1]"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return bad("epsilons must be strictly decreasing".into());
        }
        if self.coarsen < 2 {
            return bad(format!("coarsen {} must be at least 2", self.coarsen));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if self.n_paths < 2 {
            return bad(format!("n_paths {} must be at least 2", self.n_paths));
        }
        if !(self.alpha > 1.0 / 3.0 && self.alpha < 0.5) {
            return bad(format!("alpha {} outside (1/3, 1/2)", self.alpha));
        }
        if self.p_moments.is_empty() || self.p_moments.contains(&0) {
            return bad("p_moments must be a non-empty list of positive integers".into());
        }
        let rule = match self.fine_dt_rule {
            FineDtRule::FixedDt(v) | FineDtRule::EpsScaled(v) => v,
        };
        if !(rule > 0.0 && rule.is_finite()) {
            return bad(format!("fine_dt_rule parameter {rule} must be positive"));
        }
        for &e in &self.epsilons {
            let steps = self.raw_fine_steps(e);
            if !(steps <= MAX_FINE_STEPS as f64) {
                return bad(format!("epsilon {e} needs {steps:e} fine steps"));
            }
        }
        self.observable.to_spec(model.dim())?;
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec> {
        builtin_model(&self.model_name)
    }

    fn raw_fine_steps(&self, epsilon: f64) -> f64 {
        let block = self.coarsen as f64 * self.fine_dt_rule.requested_dt(epsilon);
        (self.horizon / block).ceil() * self.coarsen as f64
    }

    /// The largest step not exceeding the requested one that divides the
    /// horizon into a whole number of coarse blocks.
    pub fn fine_grid(&self, epsilon: f64) -> FineGrid {
        let steps = self.raw_fine_steps(epsilon) as usize;
        FineGrid {
            steps,
            dt: self.horizon / steps as f64,
        }
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
