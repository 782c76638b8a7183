//! Fixture helpers shared by unit and integration tests.

use std::path::PathBuf;

use crate::corpus::{attach_coref_annotations, load_multiwoz, Dialogue, SplitSpec};
use crate::encoding::TextTokenizer;
use crate::error::Result;
use crate::ontology::SlotInventory;

/// Directory of the five-dialogue MultiWOZ-format fixture.
pub fn mini_corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/multiwoz_mini")
}

/// The five fixture dialogues with coreference labels attached.
pub fn mini_corpus() -> Result<Vec<Dialogue>> {
    let dir = mini_corpus_dir();
    let inventory = SlotInventory::multiwoz();
    let (dialogues, _) = load_multiwoz(&dir, &SplitSpec::in_dir(&dir), &inventory)?;
    let (dialogues, _) = attach_coref_annotations(dialogues, &dir.join("coref.json"), &inventory)?;
    Ok(dialogues)
}

/// Word-level tokenizer covering every utterance and slot name of `dialogues`.
pub fn word_tokenizer(dialogues: &[Dialogue], inventory: &SlotInventory) -> Result<TextTokenizer> {
    let texts = dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .flat_map(|t| [t.user_utterance.as_str(), t.system_utterance.as_str()])
        .chain(inventory.slots().iter().map(|s| s.surface_form.as_str()));
    TextTokenizer::from_token_list(&TextTokenizer::build_word_vocab(texts)?)
}
