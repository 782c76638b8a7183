//! Dev-set coreference metrics used for model selection.
//!
//! Per (turn, slot) example, with "predicted coref" meaning
//! `p_coref >= threshold`:
//! - slot-type accuracy: predicted class equals gold class;
//! - span exact-match: over gold-coref examples whose antecedent lies in the
//!   input window, predicted coref and argmax span equal to the gold span;
//! - joint: fraction of examples whose class is right and, for gold-coref
//!   examples with an in-window span, whose span is right too.

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::encoding::{plan_examples, encode_key, SamplingPolicy, SlotType};
use crate::error::{CdstError, Result};
use crate::model::CdstModel;

/// One scored example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevOutcome {
    pub gold_type: SlotType,
    pub gold_span: Option<(usize, usize)>,
    pub p_coref: f64,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorefMetrics {
    pub examples: usize,
    pub gold_coref: usize,
    pub slot_type_accuracy: f64,
    pub span_exact_match: f64,
    pub joint: f64,
    pub threshold: f64,
}

pub fn score_outcomes(outcomes: &[DevOutcome], threshold: f64) -> Result<CorefMetrics> {
    if outcomes.is_empty() {
        return Err(CdstError::Invalid("empty dev stream".into()));
    }
    let mut type_ok = 0usize;
    let mut span_total = 0usize;
    let mut span_ok = 0usize;
    let mut joint_ok = 0usize;
    let mut gold_coref = 0usize;
    for o in outcomes {
        let predicted = if o.p_coref >= threshold {
            SlotType::Coref
        } else {
            SlotType::None
        };
        let class_ok = predicted == o.gold_type;
        type_ok += usize::from(class_ok);
        let mut ok = class_ok;
        if o.gold_type == SlotType::Coref {
            gold_coref += 1;
            if let Some(gold) = o.gold_span {
                span_total += 1;
                let hit = class_ok && o.span == gold;
                span_ok += usize::from(hit);
                ok = hit;
            }
        }
        joint_ok += usize::from(ok);
    }
    let n = outcomes.len() as f64;
    Ok(CorefMetrics {
        examples: outcomes.len(),
        gold_coref,
        slot_type_accuracy: type_ok as f64 / n,
        span_exact_match: if span_total == 0 {
            0.0
        } else {
            span_ok as f64 / span_total as f64
        },
        joint: joint_ok as f64 / n,
        threshold,
    })
}

/// Scores `model` on every (turn, slot) example of `dev`.
pub fn evaluate_dev(model: &CdstModel, dev: &[Dialogue], threshold: f64, batch_size: usize) -> Result<CorefMetrics> {
    let keys = plan_examples(dev, model.inventory(), SamplingPolicy::All);
    let mut outcomes = Vec::with_capacity(keys.len());
    for chunk in keys.chunks(batch_size.max(1)) {
        let examples = chunk
            .iter()
            .map(|k| encode_key(dev, model.builder(), *k))
            .collect::<Result<Vec<_>>>()?;
        for (ex, pred) in examples.iter().zip(model.predict_examples(&examples)?) {
            outcomes.push(DevOutcome {
                gold_type: ex.gold_slot_type,
                gold_span: ex.gold_span,
                p_coref: pred.p_coref,
                span: pred.span,
            });
        }
    }
    score_outcomes(&outcomes, threshold)
}
