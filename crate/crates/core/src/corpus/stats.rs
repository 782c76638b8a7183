use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dialogue;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorefStats {
    pub dialogues: usize,
    pub coref_dialogues: usize,
    /// Fraction of dialogues with at least one coreference label.
    pub coref_dialogue_fraction: f64,
    pub labels: usize,
    pub per_slot_labels: BTreeMap<String, usize>,
    pub distinct_coref_slots: usize,
    pub current_turn_antecedents: usize,
}

pub fn coref_statistics(dialogues: &[Dialogue]) -> CorefStats {
    let mut stats = CorefStats {
        dialogues: dialogues.len(),
        ..CorefStats::default()
    };
    for dialogue in dialogues {
        if dialogue.has_coref() {
            stats.coref_dialogues += 1;
        }
        for turn in &dialogue.turns {
            for label in &turn.coref_labels {
                stats.labels += 1;
                *stats.per_slot_labels.entry(label.slot.clone()).or_default() += 1;
                if label.source_turn == turn.turn_index {
                    stats.current_turn_antecedents += 1;
                }
            }
        }
    }
    stats.distinct_coref_slots = stats.per_slot_labels.len();
    if stats.dialogues > 0 {
        stats.coref_dialogue_fraction = stats.coref_dialogues as f64 / stats.dialogues as f64;
    }
    stats
}
