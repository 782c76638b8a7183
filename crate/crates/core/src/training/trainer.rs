use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{backprop::GradStore, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{evaluate_dev, CorefMetrics};
use super::schedule::LinearWarmupDecay;
use crate::corpus::Dialogue;
use crate::encoding::{encode_key, plan_examples, ExampleKey, SamplingPolicy, TextTokenizer};
use crate::error::{CdstError, Result};
use crate::model::encoder::parse_dtype;
use crate::model::{CdstModel, EncoderSpec, LossBreakdown};
use crate::ontology::SlotInventory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub slot_type_loss: f64,
    pub span_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    /// Mean of the per-step loss breakdowns.
    pub mean_loss: LossBreakdown,
    pub dev: CorefMetrics,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub config: TrainConfig,
    pub train_examples: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub epochs: Vec<EpochReport>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub step_losses: Vec<StepLoss>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochReport {
        &self.epochs[self.best_epoch - 1]
    }
}

pub struct TrainOutcome {
    pub model: CdstModel,
    pub report: TrainReport,
}

/// Vocabulary for `config.encoder`: the checkpoint's `vocab.txt` for a
/// pretrained encoder, otherwise a word vocabulary over `dialogues`.
pub fn tokenizer_for(config: &TrainConfig, dialogues: &[Dialogue], inventory: &SlotInventory) -> Result<TextTokenizer> {
    match &config.encoder {
        EncoderSpec::Pretrained { path } => TextTokenizer::from_vocab_file(&path.join("vocab.txt")),
        EncoderSpec::Tiny { .. } => crate::testing::word_tokenizer(dialogues, inventory),
    }
}

fn global_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut sum = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sum += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(sum.sqrt())
}

fn clip_gradients(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<()> {
    let norm = global_norm(grads, vars)?;
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), g.affine(scale, 0.0)?);
            }
        }
    }
    Ok(())
}

fn epoch_order(keys: &[ExampleKey], seed: u64, epoch: usize) -> Vec<ExampleKey> {
    let mut order = keys.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

fn batch_ids(dialogues: &[Dialogue], inventory: &SlotInventory, keys: &[ExampleKey]) -> Vec<String> {
    keys.iter()
        .map(|k| format!("{}/{}/{}", dialogues[k.dialogue].dialogue_id, k.turn, inventory.slots()[k.slot].name()))
        .collect()
}

fn mean_breakdown(losses: &[LossBreakdown], beta: f64) -> LossBreakdown {
    let n = losses.len().max(1) as f64;
    LossBreakdown {
        slot_type_loss: losses.iter().map(|l| l.slot_type_loss).sum::<f64>() / n,
        span_loss: losses.iter().map(|l| l.span_loss).sum::<f64>() / n,
        total: losses.iter().map(|l| l.total).sum::<f64>() / n,
        beta,
    }
}

/// Mean joint loss over every planned example of `dialogues`, without
/// updating parameters.
pub fn dataset_loss(model: &CdstModel, dialogues: &[Dialogue], policy: SamplingPolicy, beta: f64, batch_size: usize) -> Result<LossBreakdown> {
    let keys = plan_examples(dialogues, model.inventory(), policy);
    if keys.is_empty() {
        return Err(CdstError::Invalid("no examples".into()));
    }
    let mut sum = LossBreakdown {
        slot_type_loss: 0.0,
        span_loss: 0.0,
        total: 0.0,
        beta,
    };
    let mut span_examples = 0usize;
    for chunk in keys.chunks(batch_size.max(1)) {
        let examples = chunk
            .iter()
            .map(|k| encode_key(dialogues, model.builder(), *k))
            .collect::<Result<Vec<_>>>()?;
        let parts = model.loss(&examples, beta)?.breakdown()?;
        let spans = examples.iter().filter(|e| e.gold_span.is_some()).count();
        sum.slot_type_loss += parts.slot_type_loss * examples.len() as f64;
        sum.span_loss += parts.span_loss * spans as f64;
        span_examples += spans;
    }
    sum.slot_type_loss /= keys.len() as f64;
    if span_examples > 0 {
        sum.span_loss /= span_examples as f64;
    }
    sum.total = beta * sum.slot_type_loss + (1.0 - beta) * sum.span_loss;
    Ok(sum)
}

/// Fine-tunes a fresh model on `train`, selecting the epoch with the best
/// dev joint metric (earliest on ties).
pub fn train(
    train_set: &[Dialogue],
    dev_set: &[Dialogue],
    tokenizer: TextTokenizer,
    inventory: SlotInventory,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dev_set.is_empty() {
        return Err(CdstError::Invalid("empty dev set".into()));
    }
    let model = CdstModel::new(
        config.encoder.clone(),
        tokenizer,
        inventory,
        config.input_config(),
        config.decode_options(),
        config.seed,
        parse_dtype(&config.dtype)?,
    )?;
    train_model(model, train_set, dev_set, config)
}

/// Fine-tunes an existing model in place.
pub fn train_model(model: CdstModel, train_set: &[Dialogue], dev_set: &[Dialogue], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let keys = plan_examples(train_set, model.inventory(), config.sampling_policy());
    if keys.is_empty() {
        return Err(CdstError::Invalid("no training examples".into()));
    }
    let steps_per_epoch = keys.len().div_ceil(config.batch_size);
    let planned = steps_per_epoch * config.epochs;
    let total_steps = config.max_steps.map_or(planned, |m| m.min(planned));
    let schedule = LinearWarmupDecay::new(config.learning_rate, config.warmup_ratio, total_steps);

    let vars = model.varmap().all_vars();
    let mut optimizer = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: schedule.lr(0),
            beta1: 0.9,
            beta2: 0.999,
            eps: config.adam_epsilon,
            weight_decay: 0.0,
        },
    )?;

    let mut report = TrainReport {
        config_hash: config.hash(),
        config: config.clone(),
        train_examples: keys.len(),
        total_steps,
        warmup_steps: schedule.warmup_steps,
        epochs: Vec::new(),
        best_epoch: 0,
        early_stopped: false,
        step_losses: Vec::new(),
    };
    let mut best: Option<(f64, BTreeMap<String, Tensor>)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        if step >= total_steps {
            break;
        }
        let started = Instant::now();
        let order = epoch_order(&keys, config.seed, epoch);
        let mut losses = Vec::with_capacity(steps_per_epoch);
        for chunk in order.chunks(config.batch_size) {
            if step >= total_steps {
                break;
            }
            let examples = chunk
                .iter()
                .map(|k| encode_key(train_set, model.builder(), *k))
                .collect::<Result<Vec<_>>>()?;
            let loss = model.loss(&examples, config.beta)?;
            let parts = loss.breakdown()?;
            if !(parts.total.is_finite() && parts.slot_type_loss.is_finite() && parts.span_loss.is_finite()) {
                return Err(CdstError::NonFiniteLoss {
                    step,
                    batch: batch_ids(train_set, model.inventory(), chunk),
                    slot_type: parts.slot_type_loss,
                    span: parts.span_loss,
                    total: parts.total,
                });
            }
            let lr = schedule.lr(step);
            let mut grads = loss.total.backward()?;
            if let Some(max_norm) = config.gradient_clip_norm {
                clip_gradients(&mut grads, &vars, max_norm)?;
            }
            optimizer.set_learning_rate(lr);
            optimizer.step(&grads)?;
            if step.is_multiple_of(config.loss_log_interval) {
                report.step_losses.push(StepLoss {
                    step,
                    epoch,
                    learning_rate: lr,
                    slot_type_loss: parts.slot_type_loss,
                    span_loss: parts.span_loss,
                    total: parts.total,
                });
            }
            losses.push(parts);
            step += 1;
        }
        let dev = evaluate_dev(&model, dev_set, config.threshold, config.eval_batch_size)?;
        let mean_loss = mean_breakdown(&losses, config.beta);
        info!(
            "epoch {epoch}: loss {:.4} dev slot-type {:.4} span {:.4} joint {:.4}",
            mean_loss.total, dev.slot_type_accuracy, dev.span_exact_match, dev.joint
        );
        report.epochs.push(EpochReport {
            epoch,
            steps: losses.len(),
            mean_loss,
            dev,
            wall_clock_secs: if config.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        });
        if best.as_ref().is_none_or(|(score, _)| dev.joint > *score) {
            best = Some((dev.joint, model.snapshot()?));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stopping_patience.is_some_and(|p| since_best >= p) {
                report.early_stopped = true;
                break;
            }
        }
    }
    if let Some((_, snapshot)) = &best {
        model.restore(snapshot)?;
    }
    Ok(TrainOutcome { model, report })
}
