//! Per-slot classification and span heads.
//!
//! Slot `n` owns a `d×2` classification matrix with a 2-bias (class 0 =
//! none, class 1 = coref) applied to the `[CLS]` vector, and a `d×2` span
//! matrix with a 2-bias (column 0 = start, column 1 = end) applied to every
//! token vector.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{Init, VarBuilder};
use serde::{Deserialize, Serialize};

use super::encoder::MASK_VALUE;
use crate::error::{CdstError, Result};

/// Raw head outputs for a batch.
#[derive(Debug, Clone)]
pub struct HeadLogits {
    /// `[B, 2]`
    pub slot_type: Tensor,
    /// `[B, M]`
    pub start: Tensor,
    /// `[B, M]`
    pub end: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanDecoding {
    /// Independent argmax of start and end; `end < start` fails to decode.
    Independent,
    /// Best `start ≤ end` pair with at most `max_span_len` tokens.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub start_dist: Vec<f64>,
    pub end_dist: Vec<f64>,
    /// Decoded `(start, end)`; may have `end < start` under independent
    /// decoding.
    pub span: (usize, usize),
}

impl SpanPrediction {
    pub fn is_well_formed(&self) -> bool {
        self.span.0 <= self.span.1
    }
}

pub struct SlotHeads {
    cls_weight: Tensor,
    cls_bias: Tensor,
    span_weight: Tensor,
    span_bias: Tensor,
}

impl SlotHeads {
    /// Head parameters under `vb` (`cls_weight [N,d,2]`, `cls_bias [N,2]`,
    /// `span_weight [N,d,2]`, `span_bias [N,2]`).
    pub fn new(num_slots: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        let init = Init::Randn {
            mean: 0.0,
            stdev: 0.02,
        };
        Ok(Self {
            cls_weight: vb.get_with_hints((num_slots, hidden, 2), "cls_weight", init)?,
            cls_bias: vb.get_with_hints((num_slots, 2), "cls_bias", Init::Const(0.0))?,
            span_weight: vb.get_with_hints((num_slots, hidden, 2), "span_weight", init)?,
            span_bias: vb.get_with_hints((num_slots, 2), "span_bias", Init::Const(0.0))?,
        })
    }

    /// Heads from explicit values (row-major `[N,d,2]` / `[N,2]`), f64.
    pub fn from_values(
        num_slots: usize,
        hidden: usize,
        cls_weight: Vec<f64>,
        cls_bias: Vec<f64>,
        span_weight: Vec<f64>,
        span_bias: Vec<f64>,
    ) -> Result<Self> {
        let dev = Device::Cpu;
        Ok(Self {
            cls_weight: Tensor::from_vec(cls_weight, (num_slots, hidden, 2), &dev)?,
            cls_bias: Tensor::from_vec(cls_bias, (num_slots, 2), &dev)?,
            span_weight: Tensor::from_vec(span_weight, (num_slots, hidden, 2), &dev)?,
            span_bias: Tensor::from_vec(span_bias, (num_slots, 2), &dev)?,
        })
    }

    pub fn num_slots(&self) -> usize {
        self.cls_weight.dims()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.cls_weight.dims()[1]
    }

    pub fn dtype(&self) -> DType {
        self.cls_weight.dtype()
    }

    /// `(cls_weight, cls_bias, span_weight, span_bias)`.
    pub fn parameters(&self) -> [&Tensor; 4] {
        [&self.cls_weight, &self.cls_bias, &self.span_weight, &self.span_bias]
    }

    /// Batched logits. `cls`: `[B,d]`, `tokens`: `[B,M,d]`, `slot_ids`: `[B]`
    /// u32. `span_mask` (`[B,M]`, 1 = allowed) pushes excluded positions to
    /// a large negative logit.
    pub fn logits(&self, cls: &Tensor, tokens: &Tensor, slot_ids: &Tensor, span_mask: Option<&Tensor>) -> Result<HeadLogits> {
        let (b, d) = cls.dims2()?;
        if d != self.hidden_size() {
            return Err(CdstError::Dimension {
                expected: self.hidden_size(),
                got: d,
            });
        }
        let cls_w = self.cls_weight.index_select(slot_ids, 0)?; // [B,d,2]
        let cls_b = self.cls_bias.index_select(slot_ids, 0)?; // [B,2]
        let slot_type = cls.unsqueeze(1)?.matmul(&cls_w)?.squeeze(1)?.add(&cls_b)?;

        let span_w = self.span_weight.index_select(slot_ids, 0)?;
        let span_b = self.span_bias.index_select(slot_ids, 0)?;
        let span = tokens.matmul(&span_w)?.broadcast_add(&span_b.unsqueeze(1)?)?; // [B,M,2]
        let mut start = span.narrow(D::Minus1, 0, 1)?.squeeze(D::Minus1)?;
        let mut end = span.narrow(D::Minus1, 1, 1)?.squeeze(D::Minus1)?;
        if let Some(mask) = span_mask {
            let penalty = ((mask.ones_like()? - mask)? * MASK_VALUE)?;
            start = (start + &penalty)?;
            end = (end + penalty)?;
        }
        debug_assert_eq!(slot_type.dims(), &[b, 2]);
        Ok(HeadLogits { slot_type, start, end })
    }

    fn slot_tensor(&self, slot: usize) -> Result<Tensor> {
        if slot >= self.num_slots() {
            return Err(CdstError::Invalid(format!("slot index {slot} out of {}", self.num_slots())));
        }
        Ok(Tensor::new(&[slot as u32], self.cls_weight.device())?)
    }

    /// `(p_none, p_coref)` for one `[CLS]` vector.
    pub fn classify_slot_type(&self, cls_vector: &[f64], slot: usize) -> Result<(f64, f64)> {
        let d = self.hidden_size();
        if cls_vector.len() != d {
            return Err(CdstError::Dimension {
                expected: d,
                got: cls_vector.len(),
            });
        }
        let dev = self.cls_weight.device();
        let cls = Tensor::from_slice(cls_vector, (1, d), dev)?.to_dtype(self.dtype())?;
        let tokens = cls.unsqueeze(1)?;
        let logits = self.logits(&cls, &tokens, &self.slot_tensor(slot)?, None)?;
        let probs = candle_nn::ops::softmax(&logits.slot_type, D::Minus1)?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Ok((probs[0], probs[1]))
    }

    /// Start/end distributions over the positions of `token_vectors` and the
    /// decoded span. Positions with `allowed[i] == false` get probability 0.
    pub fn predict_span(
        &self,
        token_vectors: &[Vec<f64>],
        slot: usize,
        allowed: Option<&[bool]>,
        decoding: SpanDecoding,
        max_span_len: usize,
    ) -> Result<SpanPrediction> {
        let m = token_vectors.len();
        if m == 0 {
            return Err(CdstError::Invalid("no token vectors".into()));
        }
        let d = self.hidden_size();
        if let Some(bad) = token_vectors.iter().find(|v| v.len() != d) {
            return Err(CdstError::Dimension {
                expected: d,
                got: bad.len(),
            });
        }
        let dev = self.cls_weight.device();
        let flat: Vec<f64> = token_vectors.iter().flatten().copied().collect();
        let tokens = Tensor::from_vec(flat, (1, m, d), dev)?.to_dtype(self.dtype())?;
        let cls = tokens.narrow(1, 0, 1)?.squeeze(1)?;
        if allowed.is_some_and(|a| a.len() != m) {
            return Err(CdstError::Dimension {
                expected: m,
                got: allowed.map_or(0, <[bool]>::len),
            });
        }
        let logits = self.logits(&cls, &tokens, &self.slot_tensor(slot)?, None)?;
        let to_vec = |t: &Tensor| -> Result<Vec<f64>> { Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?) };
        let start_logits = to_vec(&logits.start)?;
        let end_logits = to_vec(&logits.end)?;
        span_from_logits(&start_logits, &end_logits, allowed, decoding, max_span_len)
    }
}

/// Softmax over allowed positions; excluded positions get exactly 0.
pub fn masked_softmax(logits: &[f64], allowed: Option<&[bool]>) -> Result<Vec<f64>> {
    let ok = |i: usize| allowed.is_none_or(|a| a[i]);
    let max = (0..logits.len())
        .filter(|&i| ok(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CdstError::InvalidSpan("all positions masked".into()));
    }
    let exps: Vec<f64> = (0..logits.len())
        .map(|i| if ok(i) { (logits[i] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn span_from_logits(
    start_logits: &[f64],
    end_logits: &[f64],
    allowed: Option<&[bool]>,
    decoding: SpanDecoding,
    max_span_len: usize,
) -> Result<SpanPrediction> {
    let start_dist = masked_softmax(start_logits, allowed)?;
    let end_dist = masked_softmax(end_logits, allowed)?;
    let span = match decoding {
        SpanDecoding::Independent => (argmax(&start_dist), argmax(&end_dist)),
        SpanDecoding::Joint => {
            let ok = |i: usize| allowed.is_none_or(|a| a[i]);
            let mut best: Option<((usize, usize), f64)> = None;
            for s in (0..start_dist.len()).filter(|&s| ok(s)) {
                let last = (s + max_span_len.max(1)).min(end_dist.len());
                for e in (s..last).filter(|&e| ok(e)) {
                    let score = start_dist[s] * end_dist[e];
                    if best.is_none_or(|(_, b)| score > b) {
                        best = Some(((s, e), score));
                    }
                }
            }
            best.map(|(span, _)| span)
                .ok_or_else(|| CdstError::InvalidSpan("no admissible span".into()))?
        }
    };
    Ok(SpanPrediction {
        start_dist,
        end_dist,
        span,
    })
}
