//! Scoring: joint goal accuracy, slot accuracy, coreference accuracy per
//! slot, the input ablation matrix and corpus audits.
//!
//! Values are compared as exact strings after value normalization, with an
//! absent slot equal to `"none"`. Per-slot coreference accuracy is value
//! exact-match over the gold coreference instances of each slot.

mod ablation;
mod audit;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_value, BeliefState, Dialogue, NONE_VALUE};
use crate::error::{CdstError, Result};
use crate::ontology::SlotInventory;
use crate::tracker::{MergePolicy, MergedRecord, PredictionFile};

pub use ablation::{run_ablation, Ablation, AblationRow, AblationTable};
pub use audit::{audit_dataset, AuditCheck, AuditReport};

fn value_of(state: &BeliefState, slot: &str) -> String {
    normalize_value(state.get(slot).unwrap_or(NONE_VALUE))
}

fn slot_union(a: &BeliefState, b: &BeliefState) -> Vec<String> {
    let mut slots: Vec<String> = a.iter().chain(b.iter()).map(|(k, _)| k.to_string()).collect();
    slots.sort();
    slots.dedup();
    slots
}

fn check_aligned(predicted: &[BeliefState], gold: &[BeliefState]) -> Result<()> {
    if predicted.len() != gold.len() {
        return Err(CdstError::Invalid(format!(
            "misaligned turn sequences: {} predicted, {} gold",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(CdstError::Invalid("no turns to score".into()));
    }
    Ok(())
}

/// Fraction of turns whose predicted state matches gold on every slot.
pub fn jga(predicted: &[BeliefState], gold: &[BeliefState]) -> Result<f64> {
    check_aligned(predicted, gold)?;
    let hits = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| slot_union(p, g).iter().all(|s| value_of(p, s) == value_of(g, s)))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Fraction of (turn, slot) pairs predicted correctly.
pub fn slot_accuracy(predicted: &[BeliefState], gold: &[BeliefState]) -> Result<f64> {
    check_aligned(predicted, gold)?;
    let mut total = 0usize;
    let mut hits = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        for s in slot_union(p, g) {
            total += 1;
            hits += usize::from(value_of(p, &s) == value_of(g, &s));
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Value accuracy per coreferred slot over gold coreference instances. A
/// prediction counts when it clears `threshold` and its value matches; a
/// missing prediction counts as wrong. Slots without gold instances are
/// absent.
pub fn per_slot_coref_accuracy(predictions: &PredictionFile, gold: &[Dialogue], threshold: f64) -> BTreeMap<String, SlotScore> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for d in gold {
        for turn in &d.turns {
            let preds = predictions.get(&d.dialogue_id, turn.turn_index);
            for label in &turn.coref_labels {
                let entry = counts.entry(label.slot.clone()).or_default();
                entry.1 += 1;
                let hit = preds
                    .and_then(|p| p.get(&label.slot))
                    .is_some_and(|p| p.qualifies(threshold) && normalize_value(&p.value) == normalize_value(&label.value));
                entry.0 += usize::from(hit);
            }
        }
    }
    counts
        .into_iter()
        .map(|(slot, (correct, total))| {
            (
                slot,
                SlotScore {
                    correct,
                    total,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect()
}

/// Slot-type accuracy of a prediction file over every (turn, slot) of
/// `gold`; missing predictions count as "none".
pub fn coref_slot_type_accuracy(predictions: &PredictionFile, gold: &[Dialogue], inventory: &SlotInventory, threshold: f64) -> Result<f64> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for d in gold {
        for turn in &d.turns {
            let preds = predictions.get(&d.dialogue_id, turn.turn_index);
            for slot in inventory.names() {
                let gold_coref = turn.coref_labels.iter().any(|l| l.slot == slot);
                let predicted = preds.and_then(|p| p.get(&slot)).is_some_and(|p| p.p_coref >= threshold);
                total += 1;
                hits += usize::from(gold_coref == predicted);
            }
        }
    }
    if total == 0 {
        return Err(CdstError::Invalid("no turns to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Coref edits merged into an external base tracker's states.
    Merged,
    /// Coref edits merged into all-"none" states.
    CdstStandalone,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Merged => "merged",
            EvalMode::CdstStandalone => "cdst-standalone",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub merge_policy: MergePolicy,
    pub threshold: f64,
    pub jga: f64,
    pub slot_accuracy: f64,
    pub coref_slot_type_accuracy: f64,
    /// Decoded-value exact-match over all gold coreference instances.
    pub coref_span_exact_match: f64,
    pub per_slot_coref_accuracy: BTreeMap<String, SlotScore>,
    pub turn_count: usize,
    pub config_hash: Option<String>,
    pub notes: Vec<String>,
}

/// Aligns merged records with gold turns, in corpus order.
pub fn align_states(merged: &[MergedRecord], gold: &[Dialogue]) -> Result<(Vec<BeliefState>, Vec<BeliefState>)> {
    let by_key: BTreeMap<(&str, usize), &BeliefState> = merged
        .iter()
        .map(|r| ((r.dialogue_id.as_str(), r.turn_index), &r.state))
        .collect();
    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for d in gold {
        for turn in &d.turns {
            let state = by_key.get(&(d.dialogue_id.as_str(), turn.turn_index)).ok_or_else(|| {
                CdstError::MissingInput(format!("merged state for {} turn {}", d.dialogue_id, turn.turn_index))
            })?;
            predicted.push((*state).clone());
            reference.push(turn.gold_state.clone());
        }
    }
    Ok((predicted, reference))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub policy: MergePolicy,
    pub threshold: f64,
}

pub fn evaluate(
    merged: &[MergedRecord],
    predictions: &PredictionFile,
    gold: &[Dialogue],
    inventory: &SlotInventory,
    settings: EvalSettings,
    config_hash: Option<String>,
) -> Result<EvalReport> {
    let (predicted, reference) = align_states(merged, gold)?;
    let per_slot = per_slot_coref_accuracy(predictions, gold, settings.threshold);
    let (correct, total) = per_slot.values().fold((0, 0), |(c, t), s| (c + s.correct, t + s.total));
    Ok(EvalReport {
        mode: settings.mode,
        merge_policy: settings.policy,
        threshold: settings.threshold,
        jga: jga(&predicted, &reference)?,
        slot_accuracy: slot_accuracy(&predicted, &reference)?,
        coref_slot_type_accuracy: coref_slot_type_accuracy(predictions, gold, inventory, settings.threshold)?,
        coref_span_exact_match: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_slot_coref_accuracy: per_slot,
        turn_count: reference.len(),
        config_hash,
        notes: vec![
            "values compared after normalization; absent slots equal \"none\"".into(),
            "per-slot coref accuracy: value exact-match over gold coref instances".into(),
        ],
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode                      {}", self.mode);
        let _ = writeln!(out, "merge policy              {}", self.merge_policy);
        let _ = writeln!(out, "threshold                 {:.3}", self.threshold);
        let _ = writeln!(out, "turns                     {}", self.turn_count);
        let _ = writeln!(out, "joint goal accuracy       {:.2}%", 100.0 * self.jga);
        let _ = writeln!(out, "slot accuracy             {:.2}%", 100.0 * self.slot_accuracy);
        let _ = writeln!(out, "coref slot-type accuracy  {:.2}%", 100.0 * self.coref_slot_type_accuracy);
        let _ = writeln!(out, "coref value exact-match   {:.2}%", 100.0 * self.coref_span_exact_match);
        if !self.per_slot_coref_accuracy.is_empty() {
            let _ = writeln!(out, "\n{:<28} {:>7} {:>9}", "slot", "count", "accuracy");
            for (slot, s) in &self.per_slot_coref_accuracy {
                let _ = writeln!(out, "{:<28} {:>7} {:>8.2}%", slot, s.total, 100.0 * s.accuracy);
            }
        }
        out
    }
}

/// `slot,correct,total,accuracy` rows.
pub fn per_slot_csv(per_slot: &BTreeMap<String, SlotScore>) -> String {
    let mut out = String::from("slot,correct,total,accuracy\n");
    for (slot, s) in per_slot {
        let _ = writeln!(out, "{slot},{},{},{:.6}", s.correct, s.total, s.accuracy);
    }
    out
}

pub fn write_per_slot_csv(path: &Path, per_slot: &BTreeMap<String, SlotScore>) -> Result<()> {
    std::fs::write(path, per_slot_csv(per_slot)).map_err(|e| CdstError::io(path, e))
}
