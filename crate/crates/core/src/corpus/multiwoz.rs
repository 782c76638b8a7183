//! MultiWOZ 2.1 `data.json` loader.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{normalize_text, normalize_value, BeliefState, Dialogue, Split, Turn};
use crate::error::{CdstError, Result};
use crate::ontology::SlotInventory;

/// Where the dev/test dialogue id lists live. Every other dialogue is train.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub dev_list: PathBuf,
    pub test_list: PathBuf,
}

impl SplitSpec {
    /// Standard MultiWOZ file names inside `data_dir` (`valListFile.txt` or
    /// `.json`, `testListFile.txt` or `.json`).
    pub fn in_dir(data_dir: &Path) -> Self {
        let pick = |stem: &str| {
            let txt = data_dir.join(format!("{stem}.txt"));
            let json = data_dir.join(format!("{stem}.json"));
            if !txt.exists() && json.exists() {
                json
            } else {
                txt
            }
        };
        Self {
            dev_list: pick("valListFile"),
            test_list: pick("testListFile"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDialogue {
    pub dialogue_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub entries: usize,
    pub loaded: usize,
    pub split_sizes: BTreeMap<Split, usize>,
    pub skipped: Vec<SkippedDialogue>,
    /// Ids in the split lists that were not found in `data.json`.
    pub missing_listed: usize,
}

fn read_id_list(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CdstError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let ids: Vec<String> =
            serde_json::from_str(&text).map_err(|e| CdstError::json(path.display().to_string(), e))?;
        return Ok(ids.into_iter().map(|s| s.trim().to_string()).collect());
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Loads `data.json` and the split lists from `data_dir`.
///
/// Malformed dialogue entries are skipped and listed in the report; a
/// missing data file or split list is an error.
pub fn load_multiwoz(
    data_dir: &Path,
    splits: &SplitSpec,
    inventory: &SlotInventory,
) -> Result<(Vec<Dialogue>, LoadReport)> {
    let data_path = data_dir.join("data.json");
    if !data_path.is_file() {
        return Err(CdstError::MissingInput(format!("{} not found", data_path.display())));
    }
    let dev_ids = read_id_list(&splits.dev_list)?;
    let test_ids = read_id_list(&splits.test_list)?;

    let text = std::fs::read_to_string(&data_path).map_err(|e| CdstError::io(&data_path, e))?;
    let raw: Map<String, Value> =
        serde_json::from_str(&text).map_err(|e| CdstError::json(data_path.display().to_string(), e))?;

    let mut report = LoadReport {
        entries: raw.len(),
        ..LoadReport::default()
    };
    let mut dialogues = Vec::with_capacity(raw.len());
    for (id, entry) in &raw {
        let split = if test_ids.contains(id) {
            Split::Test
        } else if dev_ids.contains(id) {
            Split::Dev
        } else {
            Split::Train
        };
        match parse_dialogue(id, entry, split, inventory) {
            Ok(dialogue) => {
                *report.split_sizes.entry(split).or_default() += 1;
                dialogues.push(dialogue);
            }
            Err(reason) => {
                warn!("skipping dialogue {id}: {reason}");
                report.skipped.push(SkippedDialogue {
                    dialogue_id: id.clone(),
                    reason,
                });
            }
        }
    }
    report.loaded = dialogues.len();
    report.missing_listed = dev_ids
        .iter()
        .chain(test_ids.iter())
        .filter(|id| !raw.contains_key(id.as_str()))
        .count();
    Ok((dialogues, report))
}

fn parse_dialogue(
    id: &str,
    entry: &Value,
    split: Split,
    inventory: &SlotInventory,
) -> std::result::Result<Dialogue, String> {
    let log = entry
        .get("log")
        .and_then(Value::as_array)
        .ok_or("missing `log` array")?;
    if log.is_empty() {
        return Err("empty log".into());
    }
    let text_at = |i: usize| -> std::result::Result<String, String> {
        log[i]
            .get("text")
            .and_then(Value::as_str)
            .map(normalize_text)
            .ok_or_else(|| format!("log entry {i} has no text"))
    };

    let mut turns = Vec::with_capacity(log.len().div_ceil(2));
    let mut previous = BeliefState::empty(inventory);
    for (turn_index, user_pos) in (0..log.len()).step_by(2).enumerate() {
        let user_utterance = text_at(user_pos)?;
        let (system_utterance, gold_state) = if user_pos + 1 < log.len() {
            let system = text_at(user_pos + 1)?;
            let state = match log[user_pos + 1].get("metadata") {
                Some(Value::Object(meta)) if !meta.is_empty() => {
                    state_from_metadata(meta, inventory)
                        .map_err(|e| format!("turn {turn_index}: {e}"))?
                }
                Some(Value::Object(_)) | None => previous.clone(),
                Some(_) => return Err(format!("turn {turn_index}: metadata is not an object")),
            };
            (system, state)
        } else {
            (String::new(), previous.clone())
        };
        previous = gold_state.clone();
        turns.push(Turn {
            turn_index,
            user_utterance,
            system_utterance,
            gold_state,
            coref_labels: Vec::new(),
        });
    }
    Ok(Dialogue {
        dialogue_id: id.to_string(),
        split,
        turns,
    })
}

fn lookup_ci<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
}

fn state_from_metadata(
    meta: &Map<String, Value>,
    inventory: &SlotInventory,
) -> std::result::Result<BeliefState, String> {
    let mut state = BeliefState::empty(inventory);
    for slot in inventory.slots() {
        let Some(domain) = lookup_ci(meta, &slot.domain).and_then(Value::as_object) else {
            continue;
        };
        let (section, key) = match slot.slot.strip_prefix("book ") {
            Some(rest) => ("book", rest),
            None => ("semi", slot.slot.as_str()),
        };
        let value = lookup_ci(domain, section)
            .and_then(Value::as_object)
            .and_then(|s| lookup_ci(s, key));
        let text = match value {
            None | Some(Value::Null) => continue,
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(items)) => match items.first() {
                Some(Value::String(s)) => s.clone(),
                _ => continue,
            },
            Some(other) => return Err(format!("{}: unexpected value {other}", slot.name())),
        };
        // multi-valued annotations keep the first alternative
        let first = text.split('|').next().unwrap_or_default();
        state.set(slot.name(), normalize_value(first));
    }
    Ok(state)
}
