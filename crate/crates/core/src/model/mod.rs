//! Encoder, slot heads, joint loss and the assembled model.

mod cdst;
pub mod checkpoint;
pub mod encoder;
pub mod heads;
pub mod loss;

pub use cdst::{Batch, CdstModel, CorefPrediction, DecodeOptions, EncoderOutput, EncoderSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use encoder::{BertConfig, BertEncoder, ContextEncoder};
pub use heads::{argmax, masked_softmax, span_from_logits, HeadLogits, SlotHeads, SpanDecoding, SpanPrediction};
pub use loss::{joint_loss, joint_loss_raw, GoldLabel, JointLoss, LossBreakdown, RawHeadOutput};
