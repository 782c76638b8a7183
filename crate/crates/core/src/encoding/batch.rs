//! Example planning and sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{EncodedExample, InputBuilder};
use crate::corpus::Dialogue;
use crate::error::Result;
use crate::ontology::SlotInventory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingPolicy {
    /// Every (turn, slot) pair.
    All,
    /// Every coreference example plus `negatives_per_positive` sampled
    /// non-coreference examples per positive.
    Balanced { negatives_per_positive: usize, seed: u64 },
}

/// Address of one (turn, slot) example within a dialogue list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExampleKey {
    pub dialogue: usize,
    pub turn: usize,
    pub slot: usize,
    pub positive: bool,
}

/// Selects example keys in corpus order (dialogue, turn, slot).
pub fn plan_examples(dialogues: &[Dialogue], inventory: &SlotInventory, policy: SamplingPolicy) -> Vec<ExampleKey> {
    let mut keys = Vec::new();
    for (d, dialogue) in dialogues.iter().enumerate() {
        for (t, turn) in dialogue.turns.iter().enumerate() {
            for (s, slot) in inventory.slots().iter().enumerate() {
                let name = slot.name();
                let positive = turn.coref_labels.iter().any(|l| l.slot == name);
                keys.push(ExampleKey {
                    dialogue: d,
                    turn: t,
                    slot: s,
                    positive,
                });
            }
        }
    }
    match policy {
        SamplingPolicy::All => keys,
        SamplingPolicy::Balanced {
            negatives_per_positive,
            seed,
        } => {
            let (mut positives, mut negatives): (Vec<_>, Vec<_>) = keys.into_iter().partition(|k| k.positive);
            let wanted = (positives.len() * negatives_per_positive).min(negatives.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            negatives.shuffle(&mut rng);
            negatives.truncate(wanted);
            positives.extend(negatives);
            positives.sort();
            positives
        }
    }
}

/// Lazily encodes the planned examples.
pub fn batch_examples<'a>(
    dialogues: &'a [Dialogue],
    builder: &'a InputBuilder,
    policy: SamplingPolicy,
) -> impl Iterator<Item = Result<EncodedExample>> + 'a {
    let keys = plan_examples(dialogues, builder.inventory(), policy);
    keys.into_iter().map(move |k| encode_key(dialogues, builder, k))
}

pub fn encode_key(dialogues: &[Dialogue], builder: &InputBuilder, key: ExampleKey) -> Result<EncodedExample> {
    let slot = builder.inventory().slots()[key.slot].name();
    builder.build(&dialogues[key.dialogue], key.turn, &slot)
}
