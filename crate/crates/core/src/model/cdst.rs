//! The assembled tracker model: encoder + per-slot heads + input builder.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use super::encoder::{init_parameters, load_pretrained_weights, BertConfig, BertEncoder, ContextEncoder};
use super::heads::{span_from_logits, HeadLogits, SlotHeads, SpanDecoding};
use super::loss::{joint_loss, GoldLabel, JointLoss};
use crate::corpus::{Dialogue, NONE_VALUE};
use crate::encoding::{decode_span_to_text, EncodedExample, InputBuilder, InputConfig, TextTokenizer};
use crate::error::{CdstError, Result};
use crate::ontology::SlotInventory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderSpec {
    /// Randomly initialized small transformer.
    Tiny {
        #[serde(default = "default_tiny_layers")]
        layers: usize,
        #[serde(default = "default_tiny_hidden")]
        hidden: usize,
    },
    /// Directory holding `config.json`, `vocab.txt` and `model.safetensors`
    /// of a BERT checkpoint.
    Pretrained { path: PathBuf },
}

fn default_tiny_layers() -> usize {
    2
}

fn default_tiny_hidden() -> usize {
    32
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Tiny {
            layers: default_tiny_layers(),
            hidden: default_tiny_hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// Minimum coref probability for a slot to count as coreferred.
    pub threshold: f64,
    /// Exclude specials and the slot segment from span softmaxes.
    pub mask_invalid_positions: bool,
    pub decoding: SpanDecoding,
    pub max_span_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            mask_invalid_positions: true,
            decoding: SpanDecoding::Independent,
            max_span_len: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorefPrediction {
    pub slot: String,
    pub p_coref: f64,
    pub start_dist: Vec<f64>,
    pub end_dist: Vec<f64>,
    pub span: (usize, usize),
    /// Decoded text, or `"none"`.
    pub value: String,
}

/// Per-example outputs of the encoder: position 0 is `[CLS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub cls_vector: Vec<f64>,
    pub token_vectors: Vec<Vec<f64>>,
}

/// Padded tensors for a batch of examples.
pub struct Batch {
    pub input_ids: Tensor,
    pub type_ids: Tensor,
    pub attention_mask: Tensor,
    pub span_mask: Tensor,
    pub slot_ids: Tensor,
    pub allowed: Vec<Vec<bool>>,
}

pub struct CdstModel {
    varmap: VarMap,
    encoder: Box<dyn ContextEncoder>,
    encoder_config: BertConfig,
    heads: SlotHeads,
    builder: InputBuilder,
    encoder_spec: EncoderSpec,
    decode: DecodeOptions,
    device: Device,
    dtype: DType,
}

impl CdstModel {
    /// Builds a fresh model. Parameters are drawn from `seed`; pretrained
    /// encoders then overwrite their weights from the checkpoint.
    pub fn new(
        encoder_spec: EncoderSpec,
        tokenizer: TextTokenizer,
        inventory: SlotInventory,
        input: InputConfig,
        decode: DecodeOptions,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        let encoder_config = match &encoder_spec {
            EncoderSpec::Tiny { layers, hidden } => BertConfig {
                num_hidden_layers: *layers,
                hidden_size: *hidden,
                intermediate_size: hidden * 2,
                max_position_embeddings: input.max_seq_length.max(8),
                ..BertConfig::tiny(tokenizer.vocab_size())
            },
            EncoderSpec::Pretrained { path } => {
                crate::util::read_json::<BertConfig>(&path.join("config.json"))?
            }
        };
        let model = Self::skeleton(encoder_spec, encoder_config, tokenizer, inventory, input, decode, dtype)?;
        init_parameters(&model.varmap, seed, None)?;
        if let EncoderSpec::Pretrained { path } = &model.encoder_spec {
            load_pretrained_weights(&model.varmap, &path.join("model.safetensors"), &model.device)?;
        }
        Ok(model)
    }

    pub(crate) fn skeleton(
        encoder_spec: EncoderSpec,
        encoder_config: BertConfig,
        tokenizer: TextTokenizer,
        inventory: SlotInventory,
        input: InputConfig,
        decode: DecodeOptions,
        dtype: DType,
    ) -> Result<Self> {
        if tokenizer.vocab_size() > encoder_config.vocab_size {
            return Err(CdstError::Config(format!(
                "tokenizer vocabulary ({}) exceeds encoder vocabulary ({})",
                tokenizer.vocab_size(),
                encoder_config.vocab_size
            )));
        }
        if input.max_seq_length > encoder_config.max_position_embeddings {
            return Err(CdstError::Config(format!(
                "max_seq_length {} exceeds encoder positions {}",
                input.max_seq_length, encoder_config.max_position_embeddings
            )));
        }
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, &device);
        let encoder = BertEncoder::new(encoder_config.clone(), vb.clone())?;
        let heads = SlotHeads::new(inventory.len(), encoder_config.hidden_size, vb.pp("heads"))?;
        let builder = InputBuilder::new(tokenizer, inventory, input)?;
        Ok(Self {
            varmap,
            encoder: Box::new(encoder),
            encoder_config,
            heads,
            builder,
            encoder_spec,
            decode,
            device,
            dtype,
        })
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn heads(&self) -> &SlotHeads {
        &self.heads
    }

    pub fn builder(&self) -> &InputBuilder {
        &self.builder
    }

    pub fn inventory(&self) -> &SlotInventory {
        self.builder.inventory()
    }

    pub fn input_config(&self) -> &InputConfig {
        self.builder.config()
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        &self.encoder_spec
    }

    pub fn encoder_config(&self) -> &BertConfig {
        &self.encoder_config
    }

    pub fn decode_options(&self) -> &DecodeOptions {
        &self.decode
    }

    pub fn set_decode_options(&mut self, decode: DecodeOptions) {
        self.decode = decode;
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Pads `examples` into tensors.
    pub fn collate(&self, examples: &[EncodedExample]) -> Result<Batch> {
        if examples.is_empty() {
            return Err(CdstError::Invalid("empty batch".into()));
        }
        let m = examples.iter().map(EncodedExample::len).max().unwrap_or(0);
        if m > self.encoder.max_positions() {
            return Err(CdstError::Encoding(format!(
                "sequence of {m} tokens exceeds encoder limit {}",
                self.encoder.max_positions()
            )));
        }
        let pad = self.builder.tokenizer().special().pad;
        let types = self.encoder.type_vocab_size();
        let b = examples.len();
        let mut ids = vec![pad; b * m];
        let mut type_ids = vec![0u32; b * m];
        let mut attn = vec![0f64; b * m];
        let mut span = vec![0f64; b * m];
        let mut allowed = Vec::with_capacity(b);
        for (i, ex) in examples.iter().enumerate() {
            let candidates = ex.span_candidates();
            for (j, (&tok, tt)) in ex.tokens.iter().zip(ex.token_type_ids(types)).enumerate() {
                if tok as usize >= self.encoder.vocab_size() {
                    return Err(CdstError::Encoding(format!(
                        "token id {tok} outside encoder vocabulary of {}",
                        self.encoder.vocab_size()
                    )));
                }
                ids[i * m + j] = tok;
                type_ids[i * m + j] = tt;
                attn[i * m + j] = f64::from(ex.attention_mask[j]);
            }
            let row: Vec<bool> = (0..m)
                .map(|j| {
                    j < ex.len() && (!self.decode.mask_invalid_positions || candidates[j])
                })
                .collect();
            for (j, &ok) in row.iter().enumerate() {
                span[i * m + j] = f64::from(u8::from(ok));
            }
            allowed.push(row);
        }
        let slots: Vec<u32> = examples.iter().map(|e| e.slot_index as u32).collect();
        let dev = &self.device;
        Ok(Batch {
            input_ids: Tensor::from_vec(ids, (b, m), dev)?,
            type_ids: Tensor::from_vec(type_ids, (b, m), dev)?,
            attention_mask: Tensor::from_vec(attn, (b, m), dev)?.to_dtype(self.dtype)?,
            span_mask: Tensor::from_vec(span, (b, m), dev)?.to_dtype(self.dtype)?,
            slot_ids: Tensor::from_vec(slots, b, dev)?,
            allowed,
        })
    }

    /// Encoder output `[B, M, d]` for a collated batch.
    pub fn encode_batch(&self, batch: &Batch) -> Result<Tensor> {
        self.encoder.forward(&batch.input_ids, &batch.type_ids, &batch.attention_mask)
    }

    pub fn forward(&self, batch: &Batch) -> Result<HeadLogits> {
        let hidden = self.encode_batch(batch)?;
        let cls = hidden.narrow(1, 0, 1)?.squeeze(1)?;
        self.heads.logits(&cls, &hidden, &batch.slot_ids, Some(&batch.span_mask))
    }

    /// Training loss for a batch of examples.
    pub fn loss(&self, examples: &[EncodedExample], beta: f64) -> Result<JointLoss> {
        let batch = self.collate(examples)?;
        let logits = self.forward(&batch)?;
        let gold: Vec<GoldLabel> = examples
            .iter()
            .map(|e| GoldLabel {
                slot_type: e.gold_slot_type,
                span: e.gold_span,
            })
            .collect();
        joint_loss(&logits, Some(&batch.span_mask), &gold, beta)
    }

    /// Contextual representations of one example.
    pub fn encode(&self, example: &EncodedExample) -> Result<EncoderOutput> {
        let batch = self.collate(std::slice::from_ref(example))?;
        let hidden = self.encode_batch(&batch)?.squeeze(0)?.to_dtype(DType::F64)?;
        let token_vectors = hidden.to_vec2::<f64>()?;
        Ok(EncoderOutput {
            cls_vector: token_vectors[0].clone(),
            token_vectors,
        })
    }

    /// Predictions for a batch of examples.
    pub fn predict_examples(&self, examples: &[EncodedExample]) -> Result<Vec<CorefPrediction>> {
        let batch = self.collate(examples)?;
        let hidden = self.encode_batch(&batch)?;
        let cls = hidden.narrow(1, 0, 1)?.squeeze(1)?;
        let logits = self.heads.logits(&cls, &hidden, &batch.slot_ids, None)?;
        let p_coref = candle_nn::ops::softmax(&logits.slot_type, D::Minus1)?
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?;
        let starts = logits.start.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let ends = logits.end.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let n = ex.len();
                let allowed = &batch.allowed[i][..n];
                let p = p_coref[i][1];
                if !allowed.iter().any(|&a| a) {
                    // Nothing to point at, e.g. a first turn with utterance and slot dropped.
                    return Ok(CorefPrediction {
                        slot: ex.slot.clone(),
                        p_coref: p,
                        start_dist: vec![0.0; n],
                        end_dist: vec![0.0; n],
                        span: (0, 0),
                        value: NONE_VALUE.to_string(),
                    });
                }
                let span = span_from_logits(&starts[i][..n], &ends[i][..n], Some(allowed), self.decode.decoding, self.decode.max_span_len)?;
                let value = if p >= self.decode.threshold && span.is_well_formed() {
                    decode_span_to_text(ex, span.span.0, span.span.1).unwrap_or_else(|_| NONE_VALUE.to_string())
                } else {
                    NONE_VALUE.to_string()
                };
                Ok(CorefPrediction {
                    slot: ex.slot.clone(),
                    p_coref: p,
                    start_dist: span.start_dist,
                    end_dist: span.end_dist,
                    span: span.span,
                    value,
                })
            })
            .collect()
    }

    /// One prediction per inventory slot for a dialogue turn.
    pub fn predict_turn(&self, dialogue: &Dialogue, turn_index: usize) -> Result<BTreeMap<String, CorefPrediction>> {
        let examples = self
            .inventory()
            .names()
            .map(|slot| self.builder.build(dialogue, turn_index, &slot))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .predict_examples(&examples)?
            .into_iter()
            .map(|p| (p.slot.clone(), p))
            .collect())
    }

    /// Parameter snapshot, for best-epoch restore.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let data = self.varmap.data().lock().expect("varmap lock");
        data.iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        for (name, tensor) in snapshot {
            data.get(name)
                .ok_or_else(|| CdstError::Invalid(format!("unknown parameter {name}")))?
                .set(tensor)?;
        }
        Ok(())
    }

    pub(crate) fn load_parameters(&mut self, path: &Path) -> Result<()> {
        self.varmap.load(path)?;
        Ok(())
    }
}
