//! Dialogue corpus: MultiWOZ ingestion, coreference annotations, and the
//! internal JSON-lines corpus format.

mod align;
mod annotations;
mod multiwoz;
mod normalize;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CdstError, Result};
use crate::ontology::SlotInventory;
use crate::util;

pub use align::char_span_to_token_span;
pub use annotations::{attach_coref_annotations, AnnotationReport};
pub use multiwoz::{load_multiwoz, LoadReport, SkippedDialogue, SplitSpec};
pub use normalize::{
    is_none_value, normalize_text, normalize_text_with_offsets, normalize_value, value_variants,
};
pub use stats::{coref_statistics, CorefStats};

pub const NONE_VALUE: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = CdstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "val" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(CdstError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

/// Slot → value assignment for one turn. Unfilled slots hold `"none"`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    assignments: BTreeMap<String, String>,
}

impl BeliefState {
    /// Every inventory slot set to `"none"`.
    pub fn empty(inventory: &SlotInventory) -> Self {
        Self {
            assignments: inventory.names().map(|n| (n, NONE_VALUE.to_string())).collect(),
        }
    }

    /// Builds a full state from a partial map; missing slots become `"none"`.
    pub fn from_partial(
        inventory: &SlotInventory,
        values: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut state = Self::empty(inventory);
        for (slot, value) in values {
            if !inventory.contains(&slot) {
                return Err(CdstError::UnknownSlot(slot));
            }
            state.assignments.insert(slot, normalize_value(&value));
        }
        Ok(state)
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.assignments.get(slot).map(String::as_str)
    }

    pub fn set(&mut self, slot: impl Into<String>, value: impl Into<String>) {
        self.assignments.insert(slot.into(), value.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.assignments.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn filled(&self) -> impl Iterator<Item = (&str, &str)> {
        self.iter().filter(|(_, v)| !is_none_value(v))
    }

    /// True when the slot keys are exactly the inventory.
    pub fn covers(&self, inventory: &SlotInventory) -> bool {
        self.assignments.len() == inventory.len()
            && inventory.names().all(|n| self.assignments.contains_key(&n))
    }
}

/// A coreference annotation: the slot at this turn takes `value`, whose
/// antecedent is the byte range `[char_start, char_end)` of the normalized
/// utterance of `source_speaker` at `source_turn`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefLabel {
    pub slot: String,
    pub value: String,
    pub source_turn: usize,
    pub source_speaker: Speaker,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    pub user_utterance: String,
    pub system_utterance: String,
    pub gold_state: BeliefState,
    #[serde(default)]
    pub coref_labels: Vec<CorefLabel>,
}

impl Turn {
    pub fn utterance(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::User => &self.user_utterance,
            Speaker::System => &self.system_utterance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub split: Split,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn has_coref(&self) -> bool {
        self.turns.iter().any(|t| !t.coref_labels.is_empty())
    }

    /// Checks turn numbering and label slot membership.
    pub fn validate(&self, inventory: &SlotInventory) -> Result<()> {
        if self.turns.is_empty() {
            return Err(CdstError::Invalid(format!("dialogue {} has no turns", self.dialogue_id)));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.turn_index != i {
                return Err(CdstError::Invalid(format!(
                    "dialogue {}: turn {} has index {}",
                    self.dialogue_id, i, turn.turn_index
                )));
            }
            for label in &turn.coref_labels {
                if !inventory.contains(&label.slot) {
                    return Err(CdstError::UnknownSlot(label.slot.clone()));
                }
                if label.source_turn > i || label.char_start >= label.char_end {
                    return Err(CdstError::Invalid(format!(
                        "dialogue {} turn {i}: bad antecedent for {}",
                        self.dialogue_id, label.slot
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dialogues of one split, in corpus order.
pub fn split_of(dialogues: &[Dialogue], split: Split) -> Vec<Dialogue> {
    dialogues.iter().filter(|d| d.split == split).cloned().collect()
}

/// Writes the internal corpus file: one dialogue per line.
pub fn write_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    util::write_jsonl(path, dialogues)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    util::read_jsonl(path)
}
