use serde::{Deserialize, Serialize};

use super::{evaluate, EvalMode, EvalReport, EvalSettings};
use crate::corpus::Dialogue;
use crate::encoding::{InputConfig, TextTokenizer};
use crate::error::Result;
use crate::model::CdstModel;
use crate::ontology::SlotInventory;
use crate::tracker::{predict_records, track_corpus, BasePredictions, MergeRule, PredictionFile};
use crate::training::{train, TrainConfig, TrainReport};

/// Input variants: drop the current user utterance, then also the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoUtterance,
    NoUtteranceNoSlot,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoUtterance, Ablation::NoUtteranceNoSlot];

    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        let (uttr, slot) = match self {
            Ablation::Full => (true, true),
            Ablation::NoUtterance => (false, true),
            Ablation::NoUtteranceNoSlot => (false, false),
        };
        TrainConfig {
            include_utterance: uttr,
            include_slot: slot,
            ..config.clone()
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = crate::CdstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "-uttr" | "no-utterance" => Ok(Ablation::NoUtterance),
            "-uttr-slot" | "no-utterance-no-slot" => Ok(Ablation::NoUtteranceNoSlot),
            other => Err(crate::CdstError::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

/// Short label for an input configuration, e.g. `full` or `-uttr-slot`.
pub fn input_label(input: &InputConfig) -> String {
    match (input.include_utterance, input.include_slot) {
        (true, true) => "full".into(),
        (u, s) => format!("{}{}", if u { "" } else { "-uttr" }, if s { "" } else { "-slot" }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub input: InputConfig,
    pub train: TrainReport,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>9} {:>11} {:>11}\n", "input", "JGA", "coref-type", "coref-value");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>8.2}% {:>10.2}% {:>10.2}%\n",
                r.name,
                100.0 * r.report.jga,
                100.0 * r.report.coref_slot_type_accuracy,
                100.0 * r.report.coref_span_exact_match
            ));
        }
        out
    }
}

/// Predicts `test`, merges with `base` (all-"none" when absent) and scores.
pub fn score_model(
    model: &CdstModel,
    test: &[Dialogue],
    base: Option<&BasePredictions>,
    rule: MergeRule,
    config_hash: Option<String>,
) -> Result<EvalReport> {
    let inventory = model.inventory();
    let predictions = PredictionFile::from_records(predict_records(model, test)?)?;
    let (base, mode) = match base {
        Some(b) => (b.clone(), EvalMode::Merged),
        None => (BasePredictions::empty(test, inventory), EvalMode::CdstStandalone),
    };
    let merged = track_corpus(test, &base, &predictions, rule, inventory)?;
    let settings = EvalSettings {
        mode,
        policy: rule.policy,
        threshold: rule.threshold,
    };
    evaluate(&merged, &predictions, test, inventory, settings, config_hash)
}

/// Trains and scores the base configuration, then each listed variant that
/// differs from it.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    train_set: &[Dialogue],
    dev_set: &[Dialogue],
    test_set: &[Dialogue],
    tokenizer: &TextTokenizer,
    inventory: &SlotInventory,
    base_config: &TrainConfig,
    ablations: &[Ablation],
    base: Option<&BasePredictions>,
    rule: MergeRule,
) -> Result<AblationTable> {
    let mut configs = vec![base_config.clone()];
    for a in ablations {
        let c = a.apply(base_config);
        if !configs.iter().any(|x| x.input_config() == c.input_config()) {
            configs.push(c);
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let outcome = train(train_set, dev_set, tokenizer.clone(), inventory.clone(), &config)?;
        let report = score_model(&outcome.model, test_set, base, rule, Some(config.hash()))?;
        rows.push(AblationRow {
            name: input_label(&config.input_config()),
            input: config.input_config(),
            train: outcome.report,
            report,
        });
    }
    Ok(AblationTable { rows })
}
