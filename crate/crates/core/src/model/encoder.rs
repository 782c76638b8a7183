//! Contextual encoder: a BERT-style transformer built from differentiable
//! candle primitives so every parameter can be fine-tuned.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{embedding, linear, Embedding, Init, Linear, VarBuilder, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CdstError, Result};

/// Additive attention/logit mask for excluded positions.
pub const MASK_VALUE: f64 = -1e9;

/// Subset of the HuggingFace BERT `config.json` the encoder needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    1e-12
}

impl BertConfig {
    /// Two layers, hidden size 32: desk-scale tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 32,
            num_hidden_layers: 2,
            num_attention_heads: 2,
            intermediate_size: 64,
            max_position_embeddings: 512,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    /// BERT-medium (8 layers, hidden 512).
    pub fn medium(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 512,
            num_hidden_layers: 8,
            num_attention_heads: 8,
            intermediate_size: 2048,
            max_position_embeddings: 512,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_attention_heads == 0 {
            return Err(CdstError::Config("encoder sizes must be positive".into()));
        }
        if !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(CdstError::Config(format!(
                "hidden_size {} not divisible by {} heads",
                self.hidden_size, self.num_attention_heads
            )));
        }
        Ok(())
    }
}

/// The interface the heads see: token ids in, one `d`-vector per position out.
pub trait ContextEncoder: Send + Sync {
    fn hidden_size(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn type_vocab_size(&self) -> usize;
    fn max_positions(&self) -> usize;
    /// `input_ids`, `type_ids`: `[B, M]` u32; `attention_mask`: `[B, M]` in
    /// the model dtype. Returns `[B, M, d]`.
    fn forward(&self, input_ids: &Tensor, type_ids: &Tensor, attention_mask: &Tensor) -> Result<Tensor>;
}

struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    fn new(size: usize, eps: f64, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(size, "weight", Init::Const(1.0))?,
            bias: vb.get_with_hints(size, "bias", Init::Const(0.0))?,
            eps,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let mean = xs.mean_keepdim(D::Minus1)?;
        let centered = xs.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

struct Embeddings {
    word: Embedding,
    position: Embedding,
    token_type: Embedding,
    norm: LayerNorm,
}

impl Embeddings {
    fn new(cfg: &BertConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            word: embedding(cfg.vocab_size, cfg.hidden_size, vb.pp("word_embeddings"))?,
            position: embedding(cfg.max_position_embeddings, cfg.hidden_size, vb.pp("position_embeddings"))?,
            token_type: embedding(cfg.type_vocab_size, cfg.hidden_size, vb.pp("token_type_embeddings"))?,
            norm: LayerNorm::new(cfg.hidden_size, cfg.layer_norm_eps, vb.pp("LayerNorm"))?,
        })
    }

    fn forward(&self, ids: &Tensor, type_ids: &Tensor) -> candle_core::Result<Tensor> {
        let (_, len) = ids.dims2()?;
        let positions = Tensor::arange(0u32, len as u32, ids.device())?.unsqueeze(0)?;
        let xs = self
            .word
            .forward(ids)?
            .broadcast_add(&self.position.forward(&positions)?)?
            .add(&self.token_type.forward(type_ids)?)?;
        self.norm.forward(&xs)
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
    heads: usize,
}

impl Layer {
    fn new(cfg: &BertConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let h = cfg.hidden_size;
        let att = vb.pp("attention");
        Ok(Self {
            query: linear(h, h, att.pp("self").pp("query"))?,
            key: linear(h, h, att.pp("self").pp("key"))?,
            value: linear(h, h, att.pp("self").pp("value"))?,
            attn_out: linear(h, h, att.pp("output").pp("dense"))?,
            attn_norm: LayerNorm::new(h, cfg.layer_norm_eps, att.pp("output").pp("LayerNorm"))?,
            intermediate: linear(h, cfg.intermediate_size, vb.pp("intermediate").pp("dense"))?,
            output: linear(cfg.intermediate_size, h, vb.pp("output").pp("dense"))?,
            out_norm: LayerNorm::new(h, cfg.layer_norm_eps, vb.pp("output").pp("LayerNorm"))?,
            heads: cfg.num_attention_heads,
        })
    }

    fn forward(&self, xs: &Tensor, mask: &Tensor) -> candle_core::Result<Tensor> {
        let (b, m, h) = xs.dims3()?;
        let dh = h / self.heads;
        let split = |t: Tensor| -> candle_core::Result<Tensor> {
            t.reshape((b, m, self.heads, dh))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.query.forward(xs)?)?;
        let k = split(self.key.forward(xs)?)?;
        let v = split(self.value.forward(xs)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?.broadcast_add(mask)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, m, h))?;
        let attended = self.attn_norm.forward(&(self.attn_out.forward(&ctx)? + xs)?)?;
        let hidden = self.intermediate.forward(&attended)?.gelu_erf()?;
        self.out_norm.forward(&(self.output.forward(&hidden)? + attended)?)
    }
}

/// BERT encoder with HuggingFace parameter names (`embeddings.*`,
/// `encoder.layer.{i}.*`).
pub struct BertEncoder {
    config: BertConfig,
    embeddings: Embeddings,
    layers: Vec<Layer>,
}

impl BertEncoder {
    pub fn new(config: BertConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let embeddings = Embeddings::new(&config, vb.pp("embeddings"))?;
        let layers = (0..config.num_hidden_layers)
            .map(|i| Layer::new(&config, vb.pp("encoder").pp("layer").pp(i)))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            config,
            embeddings,
            layers,
        })
    }

    pub fn config(&self) -> &BertConfig {
        &self.config
    }
}

impl ContextEncoder for BertEncoder {
    fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn type_vocab_size(&self) -> usize {
        self.config.type_vocab_size
    }

    fn max_positions(&self) -> usize {
        self.config.max_position_embeddings
    }

    fn forward(&self, input_ids: &Tensor, type_ids: &Tensor, attention_mask: &Tensor) -> Result<Tensor> {
        let mask = ((attention_mask.ones_like()? - attention_mask)? * MASK_VALUE)?
            .unsqueeze(1)?
            .unsqueeze(1)?;
        let mut xs = self.embeddings.forward(input_ids, type_ids)?;
        for layer in &self.layers {
            xs = layer.forward(&xs, &mask)?;
        }
        Ok(xs)
    }
}

/// Overwrites every variable with a seeded draw: layer-norm scales 1,
/// biases 0, everything else N(0, 0.02²). Variables are visited in name
/// order so the result depends only on `seed`.
pub fn init_parameters(varmap: &VarMap, seed: u64, only_prefix: Option<&str>) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    for name in names {
        if only_prefix.is_some_and(|p| !name.starts_with(p)) {
            continue;
        }
        let var = &data[name];
        let shape = var.shape().clone();
        let count = shape.elem_count();
        let values: Vec<f64> = if name.ends_with("LayerNorm.weight") {
            vec![1.0; count]
        } else if name.ends_with("bias") {
            vec![0.0; count]
        } else {
            (0..count).map(|_| normal.sample(&mut rng)).collect()
        };
        let t = Tensor::from_vec(values, shape, var.device())?.to_dtype(var.dtype())?;
        var.set(&t)?;
    }
    Ok(())
}

/// Copies pretrained encoder weights from a safetensors file into the
/// `embeddings.*` / `encoder.*` variables. Accepts `bert.`-prefixed names
/// and legacy `gamma`/`beta` layer-norm names.
pub fn load_pretrained_weights(varmap: &VarMap, path: &Path, device: &Device) -> Result<()> {
    let raw = candle_core::safetensors::load(path, device)?;
    let mut weights: HashMap<String, Tensor> = HashMap::with_capacity(raw.len());
    for (name, tensor) in raw {
        let name = name.strip_prefix("bert.").unwrap_or(&name).to_string();
        let name = name
            .replace("LayerNorm.gamma", "LayerNorm.weight")
            .replace("LayerNorm.beta", "LayerNorm.bias");
        weights.insert(name, tensor);
    }
    let data = varmap.data().lock().expect("varmap lock");
    for (name, var) in data.iter() {
        if !(name.starts_with("embeddings.") || name.starts_with("encoder.")) {
            continue;
        }
        let tensor = weights
            .get(name)
            .ok_or_else(|| CdstError::MissingInput(format!("pretrained weight `{name}` in {}", path.display())))?;
        if tensor.shape() != var.shape() {
            return Err(CdstError::Config(format!(
                "pretrained `{name}` has shape {:?}, expected {:?}",
                tensor.shape(),
                var.shape()
            )));
        }
        var.set(&tensor.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

pub fn parse_dtype(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(CdstError::Config(format!("unsupported dtype `{other}`"))),
    }
}
