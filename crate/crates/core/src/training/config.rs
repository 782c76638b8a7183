use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{ContextOrder, InputConfig, SamplingPolicy};
use crate::error::{CdstError, Result};
use crate::model::{DecodeOptions, EncoderSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Adam with bias correction, no weight decay.
    Adam,
}

/// Which (turn, slot) examples a training epoch visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampling {
    All,
    /// All coreference examples plus this many sampled negatives per
    /// positive (drawn once, from the run seed).
    Balanced { negatives_per_positive: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_seq_length: usize,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub beta: f64,
    pub seed: u64,
    pub gradient_clip_norm: Option<f64>,
    pub encoder: EncoderSpec,
    pub adam_epsilon: f64,

    pub include_utterance: bool,
    pub include_slot: bool,
    pub context_order: ContextOrder,
    pub turn_delimiter: bool,

    pub sampling: Sampling,
    /// Coref decision threshold for dev evaluation and the saved model.
    pub threshold: f64,
    /// Hard cap on optimizer updates; the schedule is laid out over the cap.
    pub max_steps: Option<usize>,
    /// Stop after this many epochs without dev improvement.
    pub early_stopping_patience: Option<usize>,
    /// Record every n-th step loss in the report.
    pub loss_log_interval: usize,
    pub eval_batch_size: usize,
    pub dtype: String,
    /// Zero wall-clock fields so reports are byte-reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_seq_length: 512,
            warmup_ratio: 0.1,
            epochs: 10,
            optimizer: OptimizerKind::Adam,
            batch_size: 2,
            beta: 0.8,
            seed: 42,
            gradient_clip_norm: None,
            encoder: EncoderSpec::default(),
            adam_epsilon: 1e-8,
            include_utterance: true,
            include_slot: true,
            context_order: ContextOrder::Chronological,
            turn_delimiter: true,
            sampling: Sampling::Balanced {
                negatives_per_positive: 3,
            },
            threshold: 0.5,
            max_steps: None,
            early_stopping_patience: None,
            loss_log_interval: 1,
            eval_batch_size: 32,
            dtype: "f32".into(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CdstError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CdstError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| CdstError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CdstError::Config(e.to_string()))
    }

    // `!(x > 0.0)` also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CdstError::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("loss_log_interval", self.loss_log_interval),
            ("eval_batch_size", self.eval_batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0) {
                return bad(format!("gradient_clip_norm must be positive, got {c}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        crate::model::encoder::parse_dtype(&self.dtype)?;
        self.input_config().validate()
    }

    pub fn input_config(&self) -> InputConfig {
        InputConfig {
            max_seq_length: self.max_seq_length,
            include_utterance: self.include_utterance,
            include_slot: self.include_slot,
            context_order: self.context_order,
            turn_delimiter: self.turn_delimiter,
        }
    }

    pub fn sampling_policy(&self) -> SamplingPolicy {
        match self.sampling {
            Sampling::All => SamplingPolicy::All,
            Sampling::Balanced { negatives_per_positive } => SamplingPolicy::Balanced {
                negatives_per_positive,
                seed: self.seed,
            },
        }
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            threshold: self.threshold,
            ..DecodeOptions::default()
        }
    }

    pub fn hash(&self) -> String {
        crate::util::config_hash(self)
    }
}
