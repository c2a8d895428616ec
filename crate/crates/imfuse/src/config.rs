//! JSON run and generator configuration with `--set key=value` overrides.

use std::path::{Path, PathBuf};

use imfuse_core::distill::DistillConfig;
use imfuse_core::losses::LossWeights;
use imfuse_core::model::{ModelConfig, Task};
use imfuse_core::numerics::AdamConfig;
use imfuse_core::Availability;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Response,
    Survival,
}

impl From<TaskKind> for Task {
    fn from(t: TaskKind) -> Task {
        match t {
            TaskKind::Response => Task::Response,
            TaskKind::Survival => Task::Survival,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub landmarks: usize,
    pub pinv_iters: usize,
    pub n_bins: usize,
    pub radiology_hidden: usize,
    pub pathology_hidden: usize,
    pub embedding_seed: u64,
}

impl Default for ModelDims {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelDims {
            d: m.d,
            layers: m.layers,
            heads: m.heads,
            d_ff: m.d_ff,
            landmarks: m.landmarks,
            pinv_iters: m.pinv_iters,
            n_bins: m.n_bins,
            radiology_hidden: m.radiology_hidden,
            pathology_hidden: m.pathology_hidden,
            embedding_seed: m.embedding_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub temperature: f64,
    /// Defaults to the task profile when absent.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub ema_momentum: f64,
    pub max_subsets: Option<usize>,
    pub folds: usize,
    /// Restricts training and evaluation to these modality codes, e.g. "C".
    pub modalities: Option<String>,
    pub model: ModelDims,
    pub dataset: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Response,
            seed: 1,
            epochs: 30,
            lr: 2e-4,
            weight_decay: 1e-5,
            batch: 1,
            temperature: 4.0,
            alpha: None,
            beta: None,
            ema_momentum: 0.99,
            max_subsets: None,
            folds: 5,
            modalities: None,
            model: ModelDims::default(),
            dataset: PathBuf::from("data"),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d: m.d,
            layers: m.layers,
            heads: m.heads,
            d_ff: m.d_ff,
            landmarks: m.landmarks,
            pinv_iters: m.pinv_iters,
            task: self.task.into(),
            n_bins: m.n_bins,
            radiology_hidden: m.radiology_hidden,
            pathology_hidden: m.pathology_hidden,
            embedding_seed: m.embedding_seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let d = LossWeights::for_task(self.task.into());
        LossWeights {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            temperature: self.temperature,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            weights: self.loss_weights(),
            momentum: self.ema_momentum,
            weight_decay: self.weight_decay,
            adam: AdamConfig::default(),
            max_subsets: self.max_subsets,
        }
    }

    pub fn modality_filter(&self) -> Result<Availability> {
        match &self.modalities {
            None => Ok(Availability::all()),
            Some(codes) => Ok(Availability::parse(codes)?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch != 1 {
            return Err(HarnessError::Config("only batch = 1 is supported".into()));
        }
        if self.folds < 2 {
            return Err(HarnessError::Config("folds must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(HarnessError::Config("lr must be positive, weight_decay non-negative".into()));
        }
        if self.modality_filter()?.is_empty() {
            return Err(HarnessError::Config("modalities selects nothing".into()));
        }
        self.model_config().validate()?;
        self.loss_weights().validate()?;
        Ok(())
    }
}

/// Per-modality missingness probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Missingness {
    pub clinical: f64,
    pub radiology: f64,
    pub pathology: f64,
    pub genomic: f64,
}

impl Default for Missingness {
    fn default() -> Self {
        Missingness {
            clinical: 0.0,
            radiology: 0.3,
            pathology: 0.3,
            genomic: 0.3,
        }
    }
}

impl Missingness {
    pub fn as_array(&self) -> [f64; 4] {
        [self.clinical, self.radiology, self.pathology, self.genomic]
    }
}

/// Strengths of the planted evidence. Every modality carries a marginal
/// channel `marginal·u + noise`; the clinical joint channel is
/// `joint·u + z + noise` and every other modality carries a copy `z + noise`
/// of the shared nuisance `z ~ N(0, nuisance_std²)`, so the joint signal is
/// only readable with the clinical records and at least one other modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub joint: f64,
    pub marginal: f64,
    pub nuisance_std: f64,
    pub channel_noise: f64,
    /// Standard deviation of the structured background: random
    /// coefficients on `background_rank` fixed directions per modality.
    pub background: f64,
    pub background_rank: usize,
    /// Probability that a response label is flipped after the features
    /// are drawn.
    pub label_noise: f64,
    /// Per-coordinate isotropic noise on feature vectors.
    pub isotropic: f64,
    /// Norm of the marker direction on the planted pathology patch.
    pub marker: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            joint: 1.0,
            marginal: 0.2,
            nuisance_std: 3.0,
            channel_noise: 0.5,
            background: 1.0,
            background_rank: 6,
            label_noise: 0.05,
            isotropic: 0.01,
            marker: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortShape {
    pub clinical_distractors: usize,
    pub genomic_distractors: usize,
    pub slices: usize,
    pub patches: usize,
}

impl Default for CohortShape {
    fn default() -> Self {
        CohortShape {
            clinical_distractors: 12,
            genomic_distractors: 6,
            slices: 4,
            patches: 8,
        }
    }
}

/// Exponential event times with rate `base_rate·exp(gamma·η)` and
/// independent exponential censoring, truncated at `follow_up` months.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvivalSpec {
    pub gamma: f64,
    /// Multiplier on the latent risk where it enters the modality channels.
    pub signal_scale: f64,
    pub base_rate: f64,
    pub censor_rate: f64,
    pub follow_up: f64,
}

impl Default for SurvivalSpec {
    fn default() -> Self {
        SurvivalSpec {
            gamma: 2.0,
            signal_scale: 2.0,
            base_rate: 1.0 / 24.0,
            censor_rate: 1.0 / 60.0,
            follow_up: 120.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub task: TaskKind,
    pub n_cases: usize,
    pub seed: u64,
    pub missing: Missingness,
    pub signal: SignalSpec,
    pub shape: CohortShape,
    pub survival: SurvivalSpec,
    pub out: PathBuf,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            task: TaskKind::Response,
            n_cases: 600,
            seed: 1,
            missing: Missingness::default(),
            signal: SignalSpec::default(),
            shape: CohortShape::default(),
            survival: SurvivalSpec::default(),
            out: PathBuf::from("data"),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 {
            return Err(HarnessError::Config("n_cases must be positive".into()));
        }
        if self.missing.as_array().iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(HarnessError::Config("missingness rates must lie in [0, 1)".into()));
        }
        let s = &self.signal;
        let nonneg = [s.joint, s.marginal, s.nuisance_std, s.channel_noise, s.background, s.isotropic, s.marker];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(HarnessError::Config("signal parameters must be finite and non-negative".into()));
        }
        if !(0.0..0.5).contains(&s.label_noise) {
            return Err(HarnessError::Config("label_noise must lie in [0, 0.5)".into()));
        }
        if !(s.channel_noise > 0.0) {
            return Err(HarnessError::Config("channel_noise must be positive".into()));
        }
        if self.shape.slices == 0 || self.shape.patches == 0 {
            return Err(HarnessError::Config("slices and patches must be positive".into()));
        }
        let v = &self.survival;
        if !(v.base_rate > 0.0 && v.signal_scale.is_finite() && v.censor_rate >= 0.0 && v.follow_up > 0.0) {
            return Err(HarnessError::Config("invalid survival spec".into()));
        }
        Ok(())
    }
}

/// Sets `path` (dot-separated) in a JSON tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Usage(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| HarnessError::Usage(format!("`{key}` does not name an object field")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(HarnessError::Usage("empty override key".into()))
}

/// Reads a config (or starts from defaults), applies overrides and rejects
/// unknown keys.
pub fn load<T: DeserializeOwned>(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<T> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    serde_json::from_value(root).map_err(|e| HarnessError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_profile() {
        let c = RunConfig::default();
        assert_eq!((c.seed, c.epochs, c.batch, c.folds), (1, 30, 1, 5));
        assert_eq!((c.lr, c.weight_decay, c.temperature), (2e-4, 1e-5, 4.0));
        assert_eq!((c.model.d, c.model.layers), (200, 2));
        let w = c.loss_weights();
        assert_eq!((w.alpha, w.beta), (5.0, 3.0));
    }

    #[test]
    fn overrides_nest_and_parse() {
        let c: RunConfig = load(
            None,
            &["seed=2".into(), "model.d=16".into(), "task=survival".into(), "modalities=CG".into()],
        )
        .unwrap();
        assert_eq!(c.seed, 2);
        assert_eq!(c.model.d, 16);
        assert_eq!(c.task, TaskKind::Survival);
        assert_eq!(c.modalities.as_deref(), Some("CG"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(load::<RunConfig>(None, &["sede=2".into()]).is_err());
        assert!(load::<RunConfig>(None, &["model.width=2".into()]).is_err());
        assert!(load::<RunConfig>(None, &["noequals".into()]).is_err());
    }
}
