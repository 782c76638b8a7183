//! Checkpoint directories: `manifest.json`, `vocab.txt`, `model.safetensors`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cdst::{CdstModel, DecodeOptions, EncoderSpec};
use super::encoder::{parse_dtype, BertConfig};
use crate::encoding::{InputConfig, TextTokenizer};
use crate::error::{CdstError, Result};
use crate::ontology::{DomainSlot, SlotInventory};
use crate::util::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const WEIGHTS_FILE: &str = "model.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub encoder: EncoderSpec,
    pub encoder_config: BertConfig,
    pub slots: Vec<DomainSlot>,
    pub input: InputConfig,
    pub decode: DecodeOptions,
    pub beta: f64,
    pub dtype: String,
    /// Hash of the training configuration that produced the weights.
    pub train_config_hash: Option<String>,
}

pub fn save_checkpoint(model: &CdstModel, dir: &Path, beta: f64, train_config_hash: Option<String>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CdstError::io(dir, e))?;
    let manifest = CheckpointManifest {
        format_version: 1,
        encoder: model.encoder_spec().clone(),
        encoder_config: model.encoder_config().clone(),
        slots: model.inventory().slots().to_vec(),
        input: model.input_config().clone(),
        decode: *model.decode_options(),
        beta,
        dtype: model.dtype().as_str().to_string(),
        train_config_hash,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    model.builder().tokenizer().save_vocab(&dir.join(VOCAB_FILE))?;
    model.varmap().save(dir.join(WEIGHTS_FILE))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CdstModel, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != 1 {
        return Err(CdstError::Config(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    let tokenizer = TextTokenizer::from_vocab_file(&dir.join(VOCAB_FILE))?;
    let inventory = SlotInventory::new(manifest.slots.clone())?;
    let dtype = parse_dtype(&manifest.dtype)?;
    let mut model = CdstModel::skeleton(
        manifest.encoder.clone(),
        manifest.encoder_config.clone(),
        tokenizer,
        inventory,
        manifest.input.clone(),
        manifest.decode,
        dtype,
    )?;
    model.load_parameters(&dir.join(WEIGHTS_FILE))?;
    Ok((model, manifest))
}
