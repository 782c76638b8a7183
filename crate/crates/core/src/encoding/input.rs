//! Per-(turn, slot) encoder input:
//! `[CLS] slot [SEP] user-utterance [SEP] context [SEP]`.

use serde::{Deserialize, Serialize};

use super::tokenizer::{TextToken, TextTokenizer};
use crate::corpus::{char_span_to_token_span, normalize_value, Dialogue, Speaker};
use crate::error::{CdstError, Result};
use crate::ontology::SlotInventory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextOrder {
    Chronological,
    MostRecentFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub max_seq_length: usize,
    pub include_utterance: bool,
    pub include_slot: bool,
    pub context_order: ContextOrder,
    /// Insert a delimiter token between context turns.
    pub turn_delimiter: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            max_seq_length: 512,
            include_utterance: true,
            include_slot: true,
            context_order: ContextOrder::Chronological,
            turn_delimiter: true,
        }
    }
}

impl InputConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_seq_length < 8 {
            return Err(CdstError::Config(format!(
                "max_seq_length must be at least 8, got {}",
                self.max_seq_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Special,
    Slot,
    Utterance,
    Context,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotType {
    None,
    Coref,
}

impl SlotType {
    pub fn class_index(self) -> usize {
        match self {
            SlotType::None => 0,
            SlotType::Coref => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "lowercase")]
pub enum SourceField {
    Slot,
    Utterance,
    Context { turn: usize, speaker: Speaker },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText {
    pub field: SourceField,
    pub text: String,
}

/// Where a token came from: a source text and its byte range there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub source: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub slot: String,
    pub slot_index: usize,
    pub tokens: Vec<u32>,
    pub segment_ids: Vec<Segment>,
    pub attention_mask: Vec<u8>,
    pub gold_slot_type: SlotType,
    pub gold_span: Option<(usize, usize)>,
    pub gold_value: Option<String>,
    /// `None` for special tokens.
    pub token_char_map: Vec<Option<TokenOrigin>>,
    pub sources: Vec<SourceText>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Encoder segment ids: specials and slot → 0, utterance → 1, context →
    /// 1 for two-segment encoders and 2 otherwise.
    pub fn token_type_ids(&self, type_vocab_size: usize) -> Vec<u32> {
        let context = if type_vocab_size > 2 { 2 } else { 1 };
        self.segment_ids
            .iter()
            .map(|s| match s {
                Segment::Special | Segment::Slot => 0,
                Segment::Utterance => 1,
                Segment::Context => context,
            })
            .collect()
    }

    /// Positions a decoded span may start or end on.
    pub fn span_candidates(&self) -> Vec<bool> {
        self.segment_ids
            .iter()
            .map(|s| matches!(s, Segment::Utterance | Segment::Context))
            .collect()
    }

    /// Number of tokens in `segment`.
    pub fn segment_len(&self, segment: Segment) -> usize {
        self.segment_ids.iter().filter(|&&s| s == segment).count()
    }

    pub fn separator_count(&self, sep_id: u32) -> usize {
        self.tokens
            .iter()
            .zip(&self.segment_ids)
            .filter(|(&t, &s)| t == sep_id && s == Segment::Special)
            .count()
    }
}

/// Reconstructs the normalized value text under a token span from the
/// source texts (never from token strings).
pub fn decode_span_to_text(example: &EncodedExample, token_start: usize, token_end: usize) -> Result<String> {
    if token_start > token_end || token_end >= example.len() {
        return Err(CdstError::InvalidSpan(format!(
            "({token_start}, {token_end}) for sequence of length {}",
            example.len()
        )));
    }
    let origins = example.token_char_map[token_start..=token_end]
        .iter()
        .map(|o| o.ok_or_else(|| CdstError::InvalidSpan("span covers a special token".into())))
        .collect::<Result<Vec<_>>>()?;
    let source = origins[0].source;
    if origins.iter().any(|o| o.source != source) {
        return Err(CdstError::InvalidSpan("span crosses utterance boundary".into()));
    }
    let src = &example.sources[source];
    if src.field == SourceField::Slot {
        return Err(CdstError::InvalidSpan("span lies in the slot segment".into()));
    }
    let start = origins[0].start;
    let end = origins[origins.len() - 1].end;
    Ok(normalize_value(&src.text[start..end]))
}

/// Builds [`EncodedExample`]s for one tokenizer, inventory and input layout.
#[derive(Debug, Clone)]
pub struct InputBuilder {
    tokenizer: TextTokenizer,
    inventory: SlotInventory,
    config: InputConfig,
}

struct Block {
    source: usize,
    tokens: Vec<TextToken>,
}

struct Placed {
    /// First kept token index of the source's full tokenization.
    first_kept: usize,
    kept: usize,
    position: usize,
}

impl InputBuilder {
    pub fn new(tokenizer: TextTokenizer, inventory: SlotInventory, config: InputConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tokenizer,
            inventory,
            config,
        })
    }

    pub fn tokenizer(&self) -> &TextTokenizer {
        &self.tokenizer
    }

    pub fn inventory(&self) -> &SlotInventory {
        &self.inventory
    }

    pub fn config(&self) -> &InputConfig {
        &self.config
    }

    pub fn build(&self, dialogue: &Dialogue, turn_index: usize, slot: &str) -> Result<EncodedExample> {
        let slot_index = self.inventory.require(slot)?;
        let Some(turn) = dialogue.turns.get(turn_index) else {
            return Err(CdstError::Invalid(format!(
                "turn {turn_index} out of range for dialogue {} with {} turns",
                dialogue.dialogue_id,
                dialogue.turns.len()
            )));
        };
        let special = self.tokenizer.special();
        let cfg = &self.config;

        let mut sources: Vec<SourceText> = Vec::new();
        let mut full_tokens: Vec<Vec<TextToken>> = Vec::new();
        let mut add_source = |field: SourceField, text: &str| -> Result<usize> {
            full_tokens.push(self.tokenizer.tokenize(text)?);
            sources.push(SourceText {
                field,
                text: text.to_string(),
            });
            Ok(sources.len() - 1)
        };

        let slot_src = if cfg.include_slot {
            Some(add_source(SourceField::Slot, &self.inventory.slots()[slot_index].surface_form)?)
        } else {
            None
        };
        let utt_src = if cfg.include_utterance {
            Some(add_source(SourceField::Utterance, &turn.user_utterance)?)
        } else {
            None
        };
        let mut context_turns = Vec::with_capacity(turn_index);
        for k in (0..turn_index).rev() {
            let past = &dialogue.turns[k];
            let user = add_source(
                SourceField::Context {
                    turn: k,
                    speaker: Speaker::User,
                },
                &past.user_utterance,
            )?;
            let system = add_source(
                SourceField::Context {
                    turn: k,
                    speaker: Speaker::System,
                },
                &past.system_utterance,
            )?;
            context_turns.push([user, system]);
        }

        let seg_len = |src: Option<usize>| src.map_or(0, |s| full_tokens[s].len() + 1);
        let mandatory = 2 + seg_len(slot_src) + seg_len(utt_src);
        if mandatory > cfg.max_seq_length {
            return Err(CdstError::Encoding(format!(
                "slot and utterance need {mandatory} tokens, max_seq_length is {}",
                cfg.max_seq_length
            )));
        }
        let budget = cfg.max_seq_length - mandatory;

        // Keep the most recent context turns; the oldest kept turn may lose
        // its leading tokens.
        let mut kept_turns: Vec<Vec<Block>> = Vec::new();
        let mut used = 0;
        for pair in &context_turns {
            let delim = usize::from(cfg.turn_delimiter && !kept_turns.is_empty());
            let blocks: Vec<Block> = pair
                .iter()
                .map(|&s| Block {
                    source: s,
                    tokens: full_tokens[s].clone(),
                })
                .collect();
            let size: usize = blocks.iter().map(|b| b.tokens.len()).sum();
            if used + delim + size <= budget {
                used += delim + size;
                kept_turns.push(blocks);
                continue;
            }
            let room = budget.saturating_sub(used + delim);
            if room > 0 {
                let mut remaining = room;
                let mut partial: Vec<Block> = Vec::new();
                for mut block in blocks.into_iter().rev() {
                    let take = remaining.min(block.tokens.len());
                    block.tokens = block.tokens.split_off(block.tokens.len() - take);
                    remaining -= take;
                    partial.push(block);
                }
                partial.reverse();
                kept_turns.push(partial);
            }
            break;
        }
        if cfg.context_order == ContextOrder::Chronological {
            kept_turns.reverse();
        }

        let mut ex = EncodedExample {
            dialogue_id: dialogue.dialogue_id.clone(),
            turn_index,
            slot: slot.to_string(),
            slot_index,
            tokens: Vec::with_capacity(cfg.max_seq_length),
            segment_ids: Vec::new(),
            attention_mask: Vec::new(),
            gold_slot_type: SlotType::None,
            gold_span: None,
            gold_value: None,
            token_char_map: Vec::new(),
            sources: Vec::new(),
        };
        let mut placed: Vec<Option<Placed>> = (0..sources.len()).map(|_| None).collect();
        let push_special = |ex: &mut EncodedExample, id: u32| {
            ex.tokens.push(id);
            ex.segment_ids.push(Segment::Special);
            ex.token_char_map.push(None);
        };
        let push_block = |ex: &mut EncodedExample, placed: &mut Vec<Option<Placed>>, src: usize, toks: &[TextToken], seg: Segment| {
            placed[src] = Some(Placed {
                first_kept: full_tokens[src].len() - toks.len(),
                kept: toks.len(),
                position: ex.tokens.len(),
            });
            for t in toks {
                ex.tokens.push(t.id);
                ex.segment_ids.push(seg);
                ex.token_char_map.push(Some(TokenOrigin {
                    source: src,
                    start: t.start,
                    end: t.end,
                }));
            }
        };

        push_special(&mut ex, special.cls);
        if let Some(s) = slot_src {
            push_block(&mut ex, &mut placed, s, &full_tokens[s], Segment::Slot);
            push_special(&mut ex, special.sep);
        }
        if let Some(s) = utt_src {
            push_block(&mut ex, &mut placed, s, &full_tokens[s], Segment::Utterance);
            push_special(&mut ex, special.sep);
        }
        for (i, blocks) in kept_turns.iter().enumerate() {
            if i > 0 && cfg.turn_delimiter {
                push_special(&mut ex, special.turn);
            }
            for block in blocks {
                push_block(&mut ex, &mut placed, block.source, &block.tokens, Segment::Context);
            }
        }
        push_special(&mut ex, special.sep);
        ex.attention_mask = vec![1; ex.tokens.len()];

        let labels: Vec<_> = turn.coref_labels.iter().filter(|l| l.slot == slot).collect();
        if let Some(first) = labels.first() {
            ex.gold_slot_type = SlotType::Coref;
            ex.gold_value = Some(first.value.clone());
        }
        for label in labels {
            let field = if label.source_turn < turn_index {
                SourceField::Context {
                    turn: label.source_turn,
                    speaker: label.source_speaker,
                }
            } else if label.source_speaker == Speaker::User {
                SourceField::Utterance
            } else {
                continue;
            };
            let Some(src) = sources.iter().position(|s| s.field == field) else {
                continue;
            };
            let Some(place) = &placed[src] else {
                continue;
            };
            let offsets: Vec<_> = full_tokens[src].iter().map(|t| (t.start, t.end)).collect();
            let Ok((ts, te)) = char_span_to_token_span(&sources[src].text, label.char_start, label.char_end, &offsets) else {
                continue;
            };
            if ts < place.first_kept || te >= place.first_kept + place.kept {
                continue;
            }
            ex.gold_span = Some((
                place.position + ts - place.first_kept,
                place.position + te - place.first_kept,
            ));
            ex.gold_value = Some(label.value.clone());
            break;
        }
        ex.sources = sources;
        Ok(ex)
    }
}
