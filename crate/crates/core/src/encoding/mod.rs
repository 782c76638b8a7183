//! Encoder inputs: tokenization, sequence layout and gold-label projection.

mod batch;
mod input;
mod tokenizer;

pub use batch::{batch_examples, encode_key, plan_examples, ExampleKey, SamplingPolicy};
pub use input::{
    decode_span_to_text, ContextOrder, EncodedExample, InputBuilder, InputConfig, Segment, SlotType,
    SourceField, SourceText, TokenOrigin,
};
pub use tokenizer::{SpecialIds, TextToken, TextTokenizer, CLS, PAD, SEP, TURN, UNK};
