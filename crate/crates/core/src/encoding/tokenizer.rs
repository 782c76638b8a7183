//! WordPiece tokenization with byte offsets, backed by the `tokenizers` crate.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use tokenizers::models::wordpiece::WordPiece;
use tokenizers::normalizers::BertNormalizer;
use tokenizers::pre_tokenizers::bert::BertPreTokenizer;
use tokenizers::{OffsetReferential, OffsetType, PreTokenizedString, PreTokenizer, Tokenizer};

use crate::error::{CdstError, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
/// Preferred turn delimiter; BERT vocabularies fall back to `[unused1]`.
pub const TURN: &str = "[TURN]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub cls: u32,
    pub sep: u32,
    pub pad: u32,
    pub unk: u32,
    pub turn: u32,
}

/// One token of a text: id plus byte range in the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextToken {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone)]
pub struct TextTokenizer {
    inner: Tokenizer,
    special: SpecialIds,
    vocab_size: usize,
}

impl std::fmt::Debug for TextTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextTokenizer")
            .field("vocab_size", &self.vocab_size)
            .field("special", &self.special)
            .finish()
    }
}

fn tok_err(e: impl std::fmt::Display) -> CdstError {
    CdstError::Tokenizer(e.to_string())
}

impl TextTokenizer {
    /// Uncased BERT tokenizer over an explicit vocabulary.
    pub fn from_vocab(vocab: HashMap<String, u32>) -> Result<Self> {
        let lookup = |t: &str| vocab.get(t).copied();
        let require = |t: &str| lookup(t).ok_or_else(|| tok_err(format!("vocabulary lacks {t}")));
        let special = SpecialIds {
            cls: require(CLS)?,
            sep: require(SEP)?,
            pad: require(PAD)?,
            unk: require(UNK)?,
            turn: lookup(TURN)
                .or_else(|| lookup("[unused1]"))
                .map_or_else(|| require(SEP), Ok)?,
        };
        let vocab_size = vocab.values().max().map_or(0, |&m| m as usize + 1);
        let model = WordPiece::builder()
            .vocab(vocab.into_iter().collect::<ahash::AHashMap<_, _>>())
            .unk_token(UNK.to_string())
            .build()
            .map_err(tok_err)?;
        let mut inner = Tokenizer::new(model);
        inner
            .with_normalizer(Some(BertNormalizer::new(true, true, None, true)))
            .map_err(tok_err)?;
        inner.with_pre_tokenizer(Some(BertPreTokenizer));
        Ok(Self {
            inner,
            special,
            vocab_size,
        })
    }

    /// Reads a BERT `vocab.txt` (one token per line, id = line number).
    pub fn from_vocab_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CdstError::io(path, e))?;
        let vocab = text
            .lines()
            .enumerate()
            .map(|(i, t)| (t.trim_end().to_string(), i as u32))
            .collect();
        Self::from_vocab(vocab)
    }

    /// Word-level vocabulary over `texts`: specials first, then every
    /// pre-token in sorted order.
    pub fn build_word_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<String>> {
        let mut words = BTreeSet::new();
        for text in texts {
            let mut pre = PreTokenizedString::from(text.to_lowercase());
            BertPreTokenizer.pre_tokenize(&mut pre).map_err(tok_err)?;
            for (word, _, _) in pre.get_splits(OffsetReferential::Original, OffsetType::Byte) {
                words.insert(word.to_string());
            }
        }
        let mut vocab: Vec<String> = [PAD, UNK, CLS, SEP, TURN].iter().map(|s| s.to_string()).collect();
        let fresh: Vec<String> = words.into_iter().filter(|w| !vocab.contains(w)).collect();
        vocab.extend(fresh);
        Ok(vocab)
    }

    pub fn from_token_list(tokens: &[String]) -> Result<Self> {
        Self::from_vocab(
            tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect(),
        )
    }

    /// Writes the vocabulary as `vocab.txt`, ordered by id.
    pub fn save_vocab(&self, path: &Path) -> Result<()> {
        let vocab = self.inner.get_vocab(false);
        let mut by_id = vec![String::new(); self.vocab_size];
        for (token, id) in vocab {
            by_id[id as usize] = token;
        }
        let mut text = by_id.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CdstError::io(path, e))
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.inner.token_to_id(token)
    }

    /// Tokens of `text` with byte offsets into `text`; no specials added.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TextToken>> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let encoding = self.inner.encode(text, false).map_err(tok_err)?;
        Ok(encoding
            .get_ids()
            .iter()
            .zip(encoding.get_offsets())
            .map(|(&id, &(start, end))| TextToken { id, start, end })
            .collect())
    }
}
