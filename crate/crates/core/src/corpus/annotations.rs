//! Coreference annotations (MultiWOZ 2.3 style) attached to loaded dialogues.
//!
//! File schema, keyed by dialogue id:
//!
//! ```json
//! { "SNG0073.json": [
//!     { "turn": 2, "slot": "train-day", "value": "Saturday",
//!       "phrase": "the day of my hotel booking",
//!       "antecedent": { "turn": 0, "speaker": "user", "char_start": 30, "char_end": 38 } }
//! ] }
//! ```
//!
//! `antecedent` offsets count characters of the normalized utterance. When
//! the antecedent is omitted the most recent prior occurrence of the value
//! is used.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{normalize_text, normalize_value, value_variants, CorefLabel, Dialogue, Speaker};
use crate::error::{CdstError, Result};
use crate::ontology::SlotInventory;

#[derive(Debug, Clone, Deserialize)]
struct AnnotationEntry {
    turn: usize,
    slot: String,
    value: String,
    #[serde(default)]
    #[allow(dead_code)]
    phrase: Option<String>,
    #[serde(default)]
    antecedent: Option<AntecedentRef>,
}

#[derive(Debug, Clone, Deserialize)]
struct AntecedentRef {
    turn: usize,
    speaker: Speaker,
    char_start: usize,
    char_end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub entries: usize,
    pub attached: usize,
    pub unknown_dialogue: usize,
    pub unknown_turn: usize,
    pub unknown_slot: usize,
    pub alignment_failures: usize,
    /// Labels whose antecedent was found by searching for the value.
    pub located_by_search: usize,
    /// Labels whose antecedent lies in the labeled turn itself.
    pub current_turn_antecedents: usize,
}

/// Adds [`CorefLabel`]s from `annotation_file` to the matching turns.
pub fn attach_coref_annotations(
    mut dialogues: Vec<Dialogue>,
    annotation_file: &Path,
    inventory: &SlotInventory,
) -> Result<(Vec<Dialogue>, AnnotationReport)> {
    let text = std::fs::read_to_string(annotation_file)
        .map_err(|e| CdstError::io(annotation_file, e))?;
    let mut report = AnnotationReport::default();
    if text.trim().is_empty() {
        return Ok((dialogues, report));
    }
    let entries: BTreeMap<String, Vec<AnnotationEntry>> = serde_json::from_str(&text)
        .map_err(|e| CdstError::json(annotation_file.display().to_string(), e))?;

    let positions: HashMap<&str, usize> = dialogues
        .iter()
        .enumerate()
        .map(|(i, d)| (d.dialogue_id.as_str(), i))
        .collect();
    let mut located = Vec::new();
    for (dialogue_id, items) in &entries {
        report.entries += items.len();
        let Some(&pos) = positions.get(dialogue_id.as_str()) else {
            warn!("annotation for unknown dialogue {dialogue_id}");
            report.unknown_dialogue += items.len();
            continue;
        };
        for item in items {
            if !inventory.contains(&item.slot) {
                warn!("{dialogue_id}: unknown slot {}", item.slot);
                report.unknown_slot += 1;
                continue;
            }
            let dialogue = &dialogues[pos];
            if item.turn >= dialogue.turns.len() {
                report.unknown_turn += 1;
                continue;
            }
            match resolve(dialogue, item) {
                Some((label, searched)) => {
                    if searched {
                        report.located_by_search += 1;
                    }
                    if label.source_turn == item.turn {
                        report.current_turn_antecedents += 1;
                    }
                    located.push((pos, item.turn, label));
                }
                None => {
                    warn!(
                        "{dialogue_id} turn {}: antecedent for {}={} does not align",
                        item.turn, item.slot, item.value
                    );
                    report.alignment_failures += 1;
                }
            }
        }
    }
    for (pos, turn, label) in located {
        dialogues[pos].turns[turn].coref_labels.push(label);
        report.attached += 1;
    }
    Ok((dialogues, report))
}

fn resolve(dialogue: &Dialogue, item: &AnnotationEntry) -> Option<(CorefLabel, bool)> {
    let value = normalize_value(&item.value);
    match &item.antecedent {
        Some(ante) => {
            if ante.turn > item.turn {
                return None;
            }
            let text = dialogue.turns[ante.turn].utterance(ante.speaker);
            let (start, end) = char_to_byte_range(text, ante.char_start, ante.char_end)?;
            if start >= end || normalize_value(&text[start..end]) != value {
                return None;
            }
            Some((
                CorefLabel {
                    slot: item.slot.clone(),
                    value,
                    source_turn: ante.turn,
                    source_speaker: ante.speaker,
                    char_start: start,
                    char_end: end,
                },
                false,
            ))
        }
        None => {
            let (turn, speaker, start, end) = search_antecedent(dialogue, item.turn, &value)?;
            Some((
                CorefLabel {
                    slot: item.slot.clone(),
                    value,
                    source_turn: turn,
                    source_speaker: speaker,
                    char_start: start,
                    char_end: end,
                },
                true,
            ))
        }
    }
}

fn char_to_byte_range(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut bounds = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let byte_start = bounds.nth(start)?;
    let byte_end = if end == start {
        byte_start
    } else {
        bounds.nth(end.checked_sub(start + 1)?)?
    };
    Some((byte_start, byte_end))
}

/// Most recent occurrence of `value` before the labeled turn's user
/// utterance (system S_{t-1}, user U_{t-1}, ...), falling back to the
/// labeled user utterance itself.
fn search_antecedent(
    dialogue: &Dialogue,
    turn: usize,
    value: &str,
) -> Option<(usize, Speaker, usize, usize)> {
    let variants: Vec<String> = value_variants(value)
        .into_iter()
        .map(|v| normalize_text(&v))
        .filter(|v| !v.is_empty())
        .collect();
    let prior = (0..turn)
        .rev()
        .flat_map(|t| [(t, Speaker::System), (t, Speaker::User)]);
    for (t, speaker) in prior.chain(std::iter::once((turn, Speaker::User))) {
        let text = dialogue.turns[t].utterance(speaker);
        let best = variants
            .iter()
            .filter_map(|v| last_word_match(text, v).map(|s| (s, s + v.len())))
            .filter(|&(s, e)| normalize_value(&text[s..e]) == value)
            .max_by_key(|&(s, e)| (s, e));
        if let Some((s, e)) = best {
            return Some((t, speaker, s, e));
        }
    }
    None
}

fn last_word_match(text: &str, needle: &str) -> Option<usize> {
    let is_word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    text.match_indices(needle)
        .map(|(i, _)| i)
        .filter(|&i| {
            !is_word(text[..i].chars().next_back()) && !is_word(text[i + needle.len()..].chars().next())
        })
        .last()
}
