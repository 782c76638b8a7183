//! Merging coreference predictions into a base tracker's per-turn states.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_none_value, normalize_value, BeliefState, Dialogue};
use crate::error::{CdstError, Result};
use crate::model::{CdstModel, CorefPrediction};
use crate::ontology::SlotInventory;
use crate::util::{read_jsonl, write_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MergePolicy {
    /// A qualifying coref value replaces whatever the base predicted.
    #[default]
    CorefOverridesBase,
    /// A qualifying coref value is used only where the base predicted none.
    CorefFillsEmptyOnly,
}

impl std::fmt::Display for MergePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MergePolicy::CorefOverridesBase => "coref-overrides-base",
            MergePolicy::CorefFillsEmptyOnly => "coref-fills-empty-only",
        })
    }
}

impl std::str::FromStr for MergePolicy {
    type Err = CdstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coref-overrides-base" => Ok(MergePolicy::CorefOverridesBase),
            "coref-fills-empty-only" => Ok(MergePolicy::CorefFillsEmptyOnly),
            other => Err(CdstError::Config(format!("unknown merge policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRule {
    pub policy: MergePolicy,
    pub threshold: f64,
}

impl Default for MergeRule {
    fn default() -> Self {
        Self {
            policy: MergePolicy::default(),
            threshold: 0.5,
        }
    }
}

/// What the merge needs from one slot's coreference prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub p_coref: f64,
    pub span: Option<(usize, usize)>,
    /// Decoded value, or `"none"` when decoding failed or the slot was not
    /// classified as coreferred.
    pub value: String,
}

impl From<&CorefPrediction> for SlotPrediction {
    fn from(p: &CorefPrediction) -> Self {
        Self {
            p_coref: p.p_coref,
            span: Some(p.span),
            value: p.value.clone(),
        }
    }
}

impl SlotPrediction {
    /// Classified coref with a usable value.
    pub fn qualifies(&self, threshold: f64) -> bool {
        self.p_coref >= threshold && !is_none_value(&self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Base,
    Coref,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedState {
    pub state: BeliefState,
    pub provenance: BTreeMap<String, Provenance>,
}

impl MergedState {
    pub fn edited_slots(&self) -> impl Iterator<Item = &str> {
        self.provenance
            .iter()
            .filter(|(_, p)| **p == Provenance::Coref)
            .map(|(s, _)| s.as_str())
    }
}

fn check_inventory(base: &BeliefState, predictions: &BTreeMap<String, SlotPrediction>, inventory: &SlotInventory) -> Result<()> {
    if !base.covers(inventory) {
        return Err(CdstError::InventoryMismatch(format!(
            "base state has {} slots, inventory has {}",
            base.len(),
            inventory.len()
        )));
    }
    if let Some(extra) = predictions.keys().find(|s| !inventory.contains(s)) {
        return Err(CdstError::InventoryMismatch(format!("prediction for unknown slot `{extra}`")));
    }
    Ok(())
}

/// Merged state with per-slot provenance.
pub fn merge_turn(
    base: &BeliefState,
    predictions: &BTreeMap<String, SlotPrediction>,
    rule: MergeRule,
    inventory: &SlotInventory,
) -> Result<MergedState> {
    check_inventory(base, predictions, inventory)?;
    let mut state = base.clone();
    let mut provenance: BTreeMap<String, Provenance> = inventory.names().map(|n| (n, Provenance::Base)).collect();
    for (slot, pred) in predictions {
        if !pred.qualifies(rule.threshold) {
            continue;
        }
        let current = base.get(slot).unwrap_or("none");
        let take = match rule.policy {
            MergePolicy::CorefOverridesBase => true,
            MergePolicy::CorefFillsEmptyOnly => is_none_value(current),
        };
        if take {
            state.set(slot.clone(), normalize_value(&pred.value));
            provenance.insert(slot.clone(), Provenance::Coref);
        }
    }
    Ok(MergedState { state, provenance })
}

pub fn apply_coref(
    base: &BeliefState,
    predictions: &BTreeMap<String, SlotPrediction>,
    rule: MergeRule,
    inventory: &SlotInventory,
) -> Result<BeliefState> {
    merge_turn(base, predictions, rule, inventory).map(|m| m.state)
}

/// Source of per-turn coreference predictions.
pub trait CorefPredictor {
    fn predict_turn(&self, dialogue: &Dialogue, turn_index: usize) -> Result<BTreeMap<String, SlotPrediction>>;
}

impl CorefPredictor for CdstModel {
    fn predict_turn(&self, dialogue: &Dialogue, turn_index: usize) -> Result<BTreeMap<String, SlotPrediction>> {
        Ok(CdstModel::predict_turn(self, dialogue, turn_index)?
            .iter()
            .map(|(k, v)| (k.clone(), SlotPrediction::from(v)))
            .collect())
    }
}

/// One line of a coreference prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub predictions: BTreeMap<String, SlotPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

/// Coreference predictions loaded from disk, keyed by (dialogue, turn).
#[derive(Debug, Clone, Default)]
pub struct PredictionFile {
    records: HashMap<(String, usize), BTreeMap<String, SlotPrediction>>,
}

impl PredictionFile {
    pub fn from_records(records: impl IntoIterator<Item = PredictionRecord>) -> Result<Self> {
        let mut map = HashMap::new();
        for r in records {
            let key = (r.dialogue_id, r.turn_index);
            if map.insert(key.clone(), r.predictions).is_some() {
                return Err(CdstError::Invalid(format!("duplicate prediction for {} turn {}", key.0, key.1)));
            }
        }
        Ok(Self { records: map })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_records(read_jsonl::<PredictionRecord>(path)?)
    }

    pub fn get(&self, dialogue_id: &str, turn_index: usize) -> Option<&BTreeMap<String, SlotPrediction>> {
        self.records.get(&(dialogue_id.to_string(), turn_index))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl CorefPredictor for PredictionFile {
    fn predict_turn(&self, dialogue: &Dialogue, turn_index: usize) -> Result<BTreeMap<String, SlotPrediction>> {
        self.get(&dialogue.dialogue_id, turn_index).cloned().ok_or_else(|| {
            CdstError::MissingInput(format!(
                "coref predictions for {} turn {turn_index}",
                dialogue.dialogue_id
            ))
        })
    }
}

/// One line of a base-tracker prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub state: BTreeMap<String, String>,
}

/// One line of a merged output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub state: BeliefState,
    pub provenance: BTreeMap<String, Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

/// Base-tracker states keyed by (dialogue, turn), completed to the full
/// inventory with `"none"`.
#[derive(Debug, Clone, Default)]
pub struct BasePredictions {
    states: HashMap<(String, usize), BeliefState>,
}

impl BasePredictions {
    pub fn from_records(records: impl IntoIterator<Item = StateRecord>, inventory: &SlotInventory) -> Result<Self> {
        let mut states = HashMap::new();
        for r in records {
            let state = BeliefState::from_partial(inventory, r.state)?;
            let key = (r.dialogue_id, r.turn_index);
            if states.insert(key.clone(), state).is_some() {
                return Err(CdstError::Invalid(format!("duplicate base state for {} turn {}", key.0, key.1)));
            }
        }
        Ok(Self { states })
    }

    pub fn read(path: &Path, inventory: &SlotInventory) -> Result<Self> {
        Self::from_records(read_jsonl::<StateRecord>(path)?, inventory)
    }

    /// All-"none" states for every turn: scoring merged output against this
    /// base evaluates the coreference model on its own.
    pub fn empty(dialogues: &[Dialogue], inventory: &SlotInventory) -> Self {
        let states = dialogues
            .iter()
            .flat_map(|d| d.turns.iter().map(move |t| ((d.dialogue_id.clone(), t.turn_index), BeliefState::empty(inventory))))
            .collect();
        Self { states }
    }

    /// Gold states as base predictions (an oracle base tracker).
    pub fn from_gold(dialogues: &[Dialogue]) -> Self {
        let states = dialogues
            .iter()
            .flat_map(|d| d.turns.iter().map(move |t| ((d.dialogue_id.clone(), t.turn_index), t.gold_state.clone())))
            .collect();
        Self { states }
    }

    pub fn get(&self, dialogue_id: &str, turn_index: usize) -> Option<&BeliefState> {
        self.states.get(&(dialogue_id.to_string(), turn_index))
    }

    pub fn insert(&mut self, dialogue_id: &str, turn_index: usize, state: BeliefState) {
        self.states.insert((dialogue_id.to_string(), turn_index), state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One merged state per turn of `dialogue`. Each turn is merged on its own;
/// carrying values across turns is left to the base tracker.
pub fn track_dialogue(
    dialogue: &Dialogue,
    base: &BasePredictions,
    predictor: &dyn CorefPredictor,
    rule: MergeRule,
    inventory: &SlotInventory,
) -> Result<Vec<MergedState>> {
    dialogue
        .turns
        .iter()
        .map(|turn| {
            let base_state = base.get(&dialogue.dialogue_id, turn.turn_index).ok_or_else(|| {
                CdstError::MissingInput(format!(
                    "base prediction for {} turn {}",
                    dialogue.dialogue_id, turn.turn_index
                ))
            })?;
            let preds = predictor.predict_turn(dialogue, turn.turn_index)?;
            merge_turn(base_state, &preds, rule, inventory)
        })
        .collect()
}

/// [`track_dialogue`] over a corpus, flattened to output records.
pub fn track_corpus(
    dialogues: &[Dialogue],
    base: &BasePredictions,
    predictor: &dyn CorefPredictor,
    rule: MergeRule,
    inventory: &SlotInventory,
) -> Result<Vec<MergedRecord>> {
    let mut out = Vec::new();
    for d in dialogues {
        for (turn, merged) in d.turns.iter().zip(track_dialogue(d, base, predictor, rule, inventory)?) {
            out.push(MergedRecord {
                dialogue_id: d.dialogue_id.clone(),
                turn_index: turn.turn_index,
                state: merged.state,
                provenance: merged.provenance,
                manifest_hash: None,
            });
        }
    }
    Ok(out)
}

/// Prediction records for every turn of `dialogues`.
pub fn predict_records(predictor: &dyn CorefPredictor, dialogues: &[Dialogue]) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for d in dialogues {
        for turn in &d.turns {
            out.push(PredictionRecord {
                dialogue_id: d.dialogue_id.clone(),
                turn_index: turn.turn_index,
                predictions: predictor.predict_turn(d, turn.turn_index)?,
                manifest_hash: None,
            });
        }
    }
    Ok(out)
}

pub fn write_merged(path: &Path, records: &[MergedRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_merged(path: &Path) -> Result<Vec<MergedRecord>> {
    read_jsonl(path)
}
