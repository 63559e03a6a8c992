// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration, read from TOML with per-field overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::FeedbackKind;
use super::prompt::{PromptTemplate, DEFAULT_TEMPLATE};
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_ANSWER_TEMPERATURE, DEFAULT_TOP_K};
use crate::plurdec::{EntropyUnit, DEFAULT_ALPHA};
use crate::tinylm::PositionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    ZeroShot,
    FewShot,
    FullFeedbackPd,
    SaeVectors,
    SaeVectorsPd,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero_shot",
            Self::FewShot => "few_shot",
            Self::FullFeedbackPd => "full_feedback_pd",
            Self::SaeVectors => "sae_vectors",
            Self::SaeVectorsPd => "sae_vectors_pd",
        }
    }

    pub fn uses_sae(self) -> bool {
        matches!(self, Self::SaeVectors | Self::SaeVectorsPd)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero_shot" => Self::ZeroShot,
            "few_shot" => Self::FewShot,
            "full_feedback_pd" => Self::FullFeedbackPd,
            "sae_vectors" => Self::SaeVectors,
            "sae_vectors_pd" => Self::SaeVectorsPd,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub few_shot_n: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub top_k: usize,
    pub layers: Vec<usize>,
    pub scales: Vec<f64>,
    pub n_calibration: usize,
    pub feedback_kind: FeedbackKind,
    /// Annotators to steer towards; empty means every annotator with
    /// feedback in the calibration split, in order of first appearance.
    pub annotators: Vec<String>,
    pub positive_classes: Vec<usize>,
    pub binary_class: Option<usize>,
    pub unsure_label: usize,
    pub position_policy: PositionPolicy,
    pub entropy_unit: EntropyUnit,
    pub template: String,
    /// Evaluation split.
    pub dataset: Option<PathBuf>,
    /// Split that calibration pairs and few-shot examples are drawn from.
    pub calibration: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    /// Holds `layer{l}.sae` per intervention layer.
    pub sae_dir: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Thread count for record evaluation; unset uses the global pool.
    pub workers: Option<usize>,
    pub train_missing_sae: bool,
    pub sae_expansion: usize,
    pub sae_sparsity: f64,
    pub sae_lr: f64,
    pub sae_epochs: usize,
    pub sae_activations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ZeroShot,
            seed: 0,
            few_shot_n: 3,
            alpha: DEFAULT_ALPHA,
            temperature: DEFAULT_ANSWER_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
            layers: vec![1, 2, 3, 4],
            scales: vec![0.5, 1.0, 2.0, 4.0],
            n_calibration: 50,
            feedback_kind: FeedbackKind::Coarse,
            annotators: Vec::new(),
            positive_classes: vec![1, 2],
            binary_class: Some(1),
            unsure_label: 2,
            position_policy: PositionPolicy::LastPosition,
            entropy_unit: EntropyUnit::Nats,
            template: DEFAULT_TEMPLATE.to_string(),
            dataset: None,
            calibration: None,
            model: None,
            vocab: None,
            sae_dir: None,
            oracle: None,
            output: None,
            workers: None,
            train_missing_sae: true,
            sae_expansion: 8,
            sae_sparsity: 1e-3,
            sae_lr: 0.1,
            sae_epochs: 300,
            sae_activations: 1000,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, value)))
        .collect()
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value))
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => scalar(key, v).map(Some),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    match value.trim() {
        "" | "none" => None,
        v => Some(PathBuf::from(v)),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields are all serializable")
    }

    /// Sets one field from its string form. Lists are comma-separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = scalar(key, value)?,
            "few_shot_n" => self.few_shot_n = scalar(key, value)?,
            "alpha" => self.alpha = scalar(key, value)?,
            "temperature" => self.temperature = scalar(key, value)?,
            "top_k" => self.top_k = scalar(key, value)?,
            "layers" => self.layers = list(key, value)?,
            "scales" => self.scales = list(key, value)?,
            "n_calibration" => self.n_calibration = scalar(key, value)?,
            "feedback_kind" => self.feedback_kind = value.parse().map_err(|_| bad(key, value))?,
            "annotators" => self.annotators = list(key, value)?,
            "positive_classes" => self.positive_classes = list(key, value)?,
            "binary_class" => self.binary_class = optional(key, value)?,
            "unsure_label" => self.unsure_label = scalar(key, value)?,
            "position_policy" => {
                self.position_policy = value.parse().map_err(|_| bad(key, value))?
            }
            "entropy_unit" => self.entropy_unit = value.parse().map_err(|_| bad(key, value))?,
            "template" => self.template = value.to_string(),
            "dataset" => self.dataset = path(value),
            "calibration" => self.calibration = path(value),
            "model" => self.model = path(value),
            "vocab" => self.vocab = path(value),
            "sae_dir" => self.sae_dir = path(value),
            "oracle" => self.oracle = path(value),
            "output" => self.output = path(value),
            "workers" => self.workers = optional(key, value)?,
            "train_missing_sae" => self.train_missing_sae = scalar(key, value)?,
            "sae_expansion" => self.sae_expansion = scalar(key, value)?,
            "sae_sparsity" => self.sae_sparsity = scalar(key, value)?,
            "sae_lr" => self.sae_lr = scalar(key, value)?,
            "sae_epochs" => self.sae_epochs = scalar(key, value)?,
            "sae_activations" => self.sae_activations = scalar(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        PromptTemplate::new("config", self.template.clone())
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that the fields the mode needs are present and sane.
    pub fn validate(&self) -> Result<()> {
        let need = |field: &Option<PathBuf>, name: &str| {
            if field.is_none() {
                Err(Error::Config(format!("mode {} needs {name}", self.mode)))
            } else {
                Ok(())
            }
        };
        need(&self.dataset, "dataset")?;
        need(&self.model, "model")?;
        need(&self.vocab, "vocab")?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        if self.positive_classes.is_empty() {
            return Err(Error::Config("positive_classes must not be empty".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        self.template()?;
        match self.mode {
            Mode::ZeroShot | Mode::FullFeedbackPd => {}
            Mode::FewShot => {
                need(&self.calibration, "calibration")?;
                if self.few_shot_n == 0 || self.n_calibration < self.few_shot_n {
                    return Err(Error::Config(format!(
                        "few_shot_n must be in 1..={} (n_calibration)",
                        self.n_calibration
                    )));
                }
            }
            Mode::SaeVectors | Mode::SaeVectorsPd => {
                need(&self.calibration, "calibration")?;
                need(&self.sae_dir, "sae_dir")?;
                if self.layers.is_empty() || self.scales.is_empty() {
                    return Err(Error::Config(
                        "sae modes need non-empty layers and scales".into(),
                    ));
                }
                if self.layers.contains(&0) {
                    return Err(Error::Config("layers are numbered from 1".into()));
                }
                if self.scales.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Config("scales must be finite".into()));
                }
                if self.n_calibration == 0 {
                    return Err(Error::Config("n_calibration must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sae_path(&self, layer: usize) -> Option<PathBuf> {
        self.sae_dir
            .as_ref()
            .map(|d| d.join(format!("layer{layer}.sae")))
    }
}
