//! Joint objective: `beta * slot-type CE + (1 - beta) * span CE`, where the
//! span term averages the start and end cross-entropies over the examples
//! that carry a gold span.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::ops::log_softmax;
use serde::{Deserialize, Serialize};

use super::heads::HeadLogits;
use crate::encoding::SlotType;
use crate::error::{CdstError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldLabel {
    pub slot_type: SlotType,
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub slot_type_loss: f64,
    pub span_loss: f64,
    pub total: f64,
    pub beta: f64,
}

/// Differentiable loss terms.
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub total: Tensor,
    pub slot_type: Tensor,
    pub span: Tensor,
    pub beta: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

impl JointLoss {
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            slot_type_loss: scalar(&self.slot_type)?,
            span_loss: scalar(&self.span)?,
            total: scalar(&self.total)?,
            beta: self.beta,
        })
    }
}

fn one_hot(rows: &[Option<usize>], width: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f64; rows.len() * width];
    for (r, col) in rows.iter().enumerate() {
        if let Some(c) = col {
            data[r * width + c] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (rows.len(), width), device)?.to_dtype(dtype)?)
}

/// `span_mask` (`[B,M]`, 1 = allowed) must be the mask already applied to
/// the span logits; gold spans on excluded positions are rejected.
pub fn joint_loss(logits: &HeadLogits, span_mask: Option<&Tensor>, gold: &[GoldLabel], beta: f64) -> Result<JointLoss> {
    if gold.is_empty() {
        return Err(CdstError::Invalid("empty batch".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(CdstError::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let (b, m) = logits.start.dims2()?;
    if b != gold.len() {
        return Err(CdstError::Dimension { expected: b, got: gold.len() });
    }
    let allowed: Option<Vec<Vec<f64>>> = span_mask
        .map(|t| t.to_dtype(DType::F64)?.to_vec2::<f64>())
        .transpose()?;
    for (i, g) in gold.iter().enumerate() {
        if let Some((s, e)) = g.span {
            if s >= m || e >= m {
                return Err(CdstError::Span(format!("gold span ({s}, {e}) outside sequence of length {m}")));
            }
            if let Some(mask) = &allowed {
                if mask[i][s] == 0.0 || mask[i][e] == 0.0 {
                    return Err(CdstError::Span(format!("gold span ({s}, {e}) on an excluded position")));
                }
            }
        }
    }
    let dtype = logits.slot_type.dtype();
    let device = logits.slot_type.device();

    let classes: Vec<Option<usize>> = gold.iter().map(|g| Some(g.slot_type.class_index())).collect();
    let class_targets = one_hot(&classes, 2, dtype, device)?;
    let slot_type = (log_softmax(&logits.slot_type, D::Minus1)? * class_targets)?
        .sum_all()?
        .affine(-1.0 / b as f64, 0.0)?;

    let n_span = gold.iter().filter(|g| g.span.is_some()).count();
    let span = if n_span == 0 {
        slot_type.zeros_like()?
    } else {
        let starts: Vec<Option<usize>> = gold.iter().map(|g| g.span.map(|s| s.0)).collect();
        let ends: Vec<Option<usize>> = gold.iter().map(|g| g.span.map(|s| s.1)).collect();
        let start_ll = (log_softmax(&logits.start, D::Minus1)? * one_hot(&starts, m, dtype, device)?)?.sum_all()?;
        let end_ll = (log_softmax(&logits.end, D::Minus1)? * one_hot(&ends, m, dtype, device)?)?.sum_all()?;
        (start_ll + end_ll)?.affine(-0.5 / n_span as f64, 0.0)?
    };
    let total = (slot_type.affine(beta, 0.0)? + span.affine(1.0 - beta, 0.0)?)?;
    Ok(JointLoss {
        total,
        slot_type,
        span,
        beta,
    })
}

/// Unbatched head outputs for one example, for callers outside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeadOutput {
    pub slot_type_logits: [f64; 2],
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    /// Positions a span may use; `None` allows all.
    pub allowed: Option<Vec<bool>>,
}

/// [`joint_loss`] over per-example outputs of varying length (padded and
/// masked internally), in f64.
pub fn joint_loss_raw(outputs: &[RawHeadOutput], gold: &[GoldLabel], beta: f64) -> Result<LossBreakdown> {
    if outputs.is_empty() {
        return Err(CdstError::Invalid("empty batch".into()));
    }
    let m = outputs.iter().map(|o| o.start_logits.len()).max().unwrap_or(0);
    let b = outputs.len();
    let dev = Device::Cpu;
    let mut cls = Vec::with_capacity(b * 2);
    let mut start = vec![0f64; b * m];
    let mut end = vec![0f64; b * m];
    let mut mask = vec![0f64; b * m];
    for (i, o) in outputs.iter().enumerate() {
        if o.end_logits.len() != o.start_logits.len() {
            return Err(CdstError::Dimension {
                expected: o.start_logits.len(),
                got: o.end_logits.len(),
            });
        }
        cls.extend_from_slice(&o.slot_type_logits);
        for j in 0..o.start_logits.len() {
            start[i * m + j] = o.start_logits[j];
            end[i * m + j] = o.end_logits[j];
            mask[i * m + j] = f64::from(u8::from(o.allowed.as_ref().is_none_or(|a| a[j])));
        }
    }
    let mask = Tensor::from_vec(mask, (b, m), &dev)?;
    let penalty = ((mask.ones_like()? - &mask)? * super::encoder::MASK_VALUE)?;
    let logits = HeadLogits {
        slot_type: Tensor::from_vec(cls, (b, 2), &dev)?,
        start: (Tensor::from_vec(start, (b, m), &dev)? + &penalty)?,
        end: (Tensor::from_vec(end, (b, m), &dev)? + penalty)?,
    };
    joint_loss(&logits, Some(&mask), gold, beta)?.breakdown()
}
