//! Compact byte-level transformer encoder-decoder trained in-process.
//!
//! Pre-LayerNorm encoder and decoder stacks with learned positions, ReLU
//! feed-forward blocks and an untied output projection. Training is teacher
//! forced (`[BOS] + target` in, `target + [EOS]` out) with token-level
//! cross-entropy that ignores padding, optimized with AdamW. Weights are
//! initialized from a seeded generator so runs are reproducible.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, IndexOp, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use super::{AdapterError, DecodeParams, ModelAdapter, TrainConfig};
use crate::distillset::DistillExample;
use crate::shuffle::SplitMix64;

const PAD: u32 = 0;
const BOS: u32 = 1;
const EOS: u32 = 2;
const BYTE_OFFSET: u32 = 4;
const VOCAB: usize = 256 + BYTE_OFFSET as usize;
const NEG_INF: f32 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Positional capacity of the encoder, in bytes.
    pub max_input_tokens: usize,
    /// Positional capacity of the decoder, in bytes (EOS included).
    pub max_target_tokens: usize,
    pub init_seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            ff_dim: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            max_input_tokens: 2048,
            max_target_tokens: 512,
            init_seed: 0,
        }
    }
}

struct ParamInit {
    rng: SplitMix64,
    vars: Vec<(String, Var)>,
    device: Device,
}

impl ParamInit {
    fn normal(&mut self) -> f32 {
        // Box–Muller on two uniforms in (0, 1].
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let u2 = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    fn var(&mut self, name: String, shape: &[usize], std: f32) -> candle_core::Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.normal() * std).collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?;
        self.vars.push((name, var.clone()));
        Ok(var)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f32) -> candle_core::Result<Var> {
        let var = Var::from_tensor(&Tensor::full(value, shape, &self.device)?)?;
        self.vars.push((name, var.clone()));
        Ok(var)
    }
}

struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    fn new(
        init: &mut ParamInit,
        name: &str,
        input: usize,
        output: usize,
    ) -> candle_core::Result<Self> {
        Ok(Self {
            weight: init.var(
                format!("{name}.weight"),
                &[output, input],
                (1.0 / input as f32).sqrt(),
            )?,
            bias: init.constant(format!("{name}.bias"), &[output], 0.0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.broadcast_matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())
    }
}

struct LayerNorm {
    gain: Var,
    bias: Var,
}

impl LayerNorm {
    fn new(init: &mut ParamInit, name: &str, dim: usize) -> candle_core::Result<Self> {
        Ok(Self {
            gain: init.constant(format!("{name}.gain"), &[dim], 1.0)?,
            bias: init.constant(format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        normed
            .broadcast_mul(self.gain.as_tensor())?
            .broadcast_add(self.bias.as_tensor())
    }
}

struct Attention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    fn new(init: &mut ParamInit, name: &str, d: usize, heads: usize) -> candle_core::Result<Self> {
        Ok(Self {
            query: Linear::new(init, &format!("{name}.q"), d, d)?,
            key: Linear::new(init, &format!("{name}.k"), d, d)?,
            value: Linear::new(init, &format!("{name}.v"), d, d)?,
            out: Linear::new(init, &format!("{name}.o"), d, d)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        x.reshape((b, t, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()
    }

    /// `mask` is additive and broadcasts to (batch, heads, queries, keys).
    fn forward(
        &self,
        queries: &Tensor,
        keys: &Tensor,
        mask: &Tensor,
    ) -> candle_core::Result<Tensor> {
        let (b, t, d) = queries.dims3()?;
        let q = self.split_heads(&self.query.forward(queries)?)?;
        let k = self.split_heads(&self.key.forward(keys)?)?;
        let v = self.split_heads(&self.value.forward(keys)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(mask)?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let mixed = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, d))?;
        self.out.forward(&mixed)
    }
}

struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(init: &mut ParamInit, name: &str, d: usize, ff: usize) -> candle_core::Result<Self> {
        Ok(Self {
            up: Linear::new(init, &format!("{name}.up"), d, ff)?,
            down: Linear::new(init, &format!("{name}.down"), ff, d)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.relu()?)
    }
}

struct EncoderLayer {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ff: FeedForward,
}

struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: Attention,
    norm2: LayerNorm,
    cross_attn: Attention,
    norm3: LayerNorm,
    ff: FeedForward,
}

struct Transformer {
    token_embedding: Var,
    encoder_positions: Var,
    decoder_positions: Var,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    encoder_norm: LayerNorm,
    decoder_norm: LayerNorm,
    lm_head: Linear,
    vars: Vec<(String, Var)>,
}

impl Transformer {
    fn new(config: &Seq2SeqConfig, device: &Device) -> candle_core::Result<Self> {
        let d = config.d_model;
        let mut init = ParamInit {
            rng: SplitMix64::new(config.init_seed),
            vars: Vec::new(),
            device: device.clone(),
        };
        let token_embedding = init.var("tok_emb".into(), &[VOCAB, d], 1.0)?;
        let encoder_positions = init.var("enc_pos".into(), &[config.max_input_tokens, d], 0.1)?;
        let decoder_positions = init.var("dec_pos".into(), &[config.max_target_tokens, d], 0.1)?;
        let mut encoder = Vec::new();
        for i in 0..config.encoder_layers {
            let p = format!("enc.{i}");
            encoder.push(EncoderLayer {
                norm1: LayerNorm::new(&mut init, &format!("{p}.ln1"), d)?,
                attn: Attention::new(&mut init, &format!("{p}.attn"), d, config.heads)?,
                norm2: LayerNorm::new(&mut init, &format!("{p}.ln2"), d)?,
                ff: FeedForward::new(&mut init, &format!("{p}.ff"), d, config.ff_dim)?,
            });
        }
        let mut decoder = Vec::new();
        for i in 0..config.decoder_layers {
            let p = format!("dec.{i}");
            decoder.push(DecoderLayer {
                norm1: LayerNorm::new(&mut init, &format!("{p}.ln1"), d)?,
                self_attn: Attention::new(&mut init, &format!("{p}.self"), d, config.heads)?,
                norm2: LayerNorm::new(&mut init, &format!("{p}.ln2"), d)?,
                cross_attn: Attention::new(&mut init, &format!("{p}.cross"), d, config.heads)?,
                norm3: LayerNorm::new(&mut init, &format!("{p}.ln3"), d)?,
                ff: FeedForward::new(&mut init, &format!("{p}.ff"), d, config.ff_dim)?,
            });
        }
        let encoder_norm = LayerNorm::new(&mut init, "enc.ln", d)?;
        let decoder_norm = LayerNorm::new(&mut init, "dec.ln", d)?;
        let lm_head = Linear::new(&mut init, "lm_head", d, VOCAB)?;
        Ok(Self {
            token_embedding,
            encoder_positions,
            decoder_positions,
            encoder,
            decoder,
            encoder_norm,
            decoder_norm,
            lm_head,
            vars: init.vars,
        })
    }

    fn embed(&self, ids: &Tensor, positions: &Var) -> candle_core::Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let d = self.token_embedding.dims()[1];
        let tokens = self
            .token_embedding
            .as_tensor()
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, t, d))?;
        let pos = positions.as_tensor().narrow(0, 0, t)?;
        tokens.broadcast_add(&pos)
    }

    fn encode(&self, src: &Tensor, src_mask: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = self.embed(src, &self.encoder_positions)?;
        for layer in &self.encoder {
            let h = layer.norm1.forward(&x)?;
            x = (&x + layer.attn.forward(&h, &h, src_mask)?)?;
            let h = layer.norm2.forward(&x)?;
            x = (&x + layer.ff.forward(&h)?)?;
        }
        self.encoder_norm.forward(&x)
    }

    fn decode(
        &self,
        tgt: &Tensor,
        memory: &Tensor,
        src_mask: &Tensor,
    ) -> candle_core::Result<Tensor> {
        let t = tgt.dims2()?.1;
        let causal = causal_mask(t, tgt.device())?;
        let mut x = self.embed(tgt, &self.decoder_positions)?;
        for layer in &self.decoder {
            let h = layer.norm1.forward(&x)?;
            x = (&x + layer.self_attn.forward(&h, &h, &causal)?)?;
            let h = layer.norm2.forward(&x)?;
            x = (&x + layer.cross_attn.forward(&h, memory, src_mask)?)?;
            let h = layer.norm3.forward(&x)?;
            x = (&x + layer.ff.forward(&h)?)?;
        }
        self.lm_head.forward(&self.decoder_norm.forward(&x)?)
    }
}

fn causal_mask(t: usize, device: &Device) -> candle_core::Result<Tensor> {
    let data: Vec<f32> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j > i { NEG_INF } else { 0.0 }))
        .collect();
    Tensor::from_vec(data, (1, 1, t, t), device)
}

fn encode_bytes(text: &str, limit: usize) -> Vec<u32> {
    text.bytes()
        .take(limit)
        .map(|b| u32::from(b) + BYTE_OFFSET)
        .collect()
}

fn decode_bytes(ids: &[u32]) -> String {
    let bytes: Vec<u8> = ids
        .iter()
        .filter(|&&id| id >= BYTE_OFFSET)
        .map(|&id| (id - BYTE_OFFSET) as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Pad rows to a common length; returns (ids, additive key mask (b,1,1,len)).
fn pad_batch(rows: &[Vec<u32>], device: &Device) -> candle_core::Result<(Tensor, Tensor)> {
    let len = rows.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let mut ids = Vec::with_capacity(rows.len() * len);
    let mut mask = Vec::with_capacity(rows.len() * len);
    for row in rows {
        for i in 0..len {
            let id = row.get(i).copied().unwrap_or(PAD);
            ids.push(id);
            mask.push(if i < row.len() { 0.0f32 } else { NEG_INF });
        }
    }
    Ok((
        Tensor::from_vec(ids, (rows.len(), len), device)?,
        Tensor::from_vec(mask, (rows.len(), 1, 1, len), device)?,
    ))
}

/// In-process student model.
pub struct Seq2SeqAdapter {
    config: Seq2SeqConfig,
    model: Transformer,
    optimizer: Option<AdamW>,
    learning_rate: f64,
    weight_decay: f64,
    input_limit: usize,
    target_limit: usize,
    device: Device,
}

impl Seq2SeqAdapter {
    pub fn new(config: Seq2SeqConfig) -> Result<Self, AdapterError> {
        if config.heads == 0 || !config.d_model.is_multiple_of(config.heads) {
            return Err(AdapterError::Runtime(format!(
                "d_model {} is not divisible by heads {}",
                config.d_model, config.heads
            )));
        }
        if config.max_input_tokens == 0 || config.max_target_tokens < 2 {
            return Err(AdapterError::Runtime("token capacities too small".into()));
        }
        let device = Device::Cpu;
        let model = Transformer::new(&config, &device)?;
        let defaults = TrainConfig::default();
        Ok(Self {
            input_limit: config.max_input_tokens,
            target_limit: config.max_target_tokens,
            config,
            model,
            optimizer: None,
            learning_rate: defaults.learning_rate,
            weight_decay: defaults.weight_decay,
            device,
        })
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.model.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    fn optimizer(&mut self) -> Result<&mut AdamW, AdapterError> {
        if self.optimizer.is_none() {
            let vars = self.model.vars.iter().map(|(_, v)| v.clone()).collect();
            let params = ParamsAdamW {
                lr: self.learning_rate,
                weight_decay: self.weight_decay,
                ..ParamsAdamW::default()
            };
            self.optimizer = Some(AdamW::new(vars, params)?);
        }
        Ok(self.optimizer.as_mut().expect("just initialized"))
    }

    fn batch_loss(&self, batch: &[&DistillExample]) -> candle_core::Result<Tensor> {
        let sources: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| encode_bytes(&ex.input_text, self.input_limit))
            .collect();
        let targets: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| encode_bytes(&ex.target_text, self.target_limit - 1))
            .collect();
        let decoder_in: Vec<Vec<u32>> = targets
            .iter()
            .map(|t| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let labels: Vec<Vec<u32>> = targets
            .iter()
            .map(|t| t.iter().copied().chain(std::iter::once(EOS)).collect())
            .collect();

        let (src, src_mask) = pad_batch(&sources, &self.device)?;
        let (tgt, _) = pad_batch(&decoder_in, &self.device)?;
        let (labels, _) = pad_batch(&labels, &self.device)?;

        let memory = self.model.encode(&src, &src_mask)?;
        let logits = self.model.decode(&tgt, &memory, &src_mask)?;
        let (b, t, v) = logits.dims3()?;
        let log_probs = candle_nn::ops::log_softmax(&logits.reshape((b * t, v))?, D::Minus1)?;
        let flat_labels = labels.reshape((b * t, 1))?;
        let picked = log_probs.gather(&flat_labels, 1)?.squeeze(1)?;
        let keep = flat_labels.squeeze(1)?.ne(PAD)?.to_dtype(DType::F32)?;
        let count = keep.sum_all()?;
        (picked * keep)?.sum_all()?.neg()?.broadcast_div(&count)
    }
}

impl ModelAdapter for Seq2SeqAdapter {
    fn name(&self) -> &str {
        "seq2seq"
    }

    fn configure(&mut self, config: &TrainConfig) -> Result<(), AdapterError> {
        self.learning_rate = config.learning_rate;
        self.weight_decay = config.weight_decay;
        self.input_limit = config.max_input_tokens.min(self.config.max_input_tokens);
        self.target_limit = config
            .max_target_tokens
            .min(self.config.max_target_tokens)
            .max(2);
        if let Some(opt) = self.optimizer.as_mut() {
            opt.set_learning_rate(self.learning_rate);
        }
        Ok(())
    }

    fn fit_epoch(&mut self, batches: &[Vec<&DistillExample>]) -> Result<f64, AdapterError> {
        let mut total = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            let loss = self.batch_loss(batch).map_err(|e| AdapterError::Batch {
                batch: i,
                message: e.to_string(),
            })?;
            total += f64::from(loss.to_scalar::<f32>()?);
            self.optimizer()?
                .backward_step(&loss)
                .map_err(|e| AdapterError::Batch {
                    batch: i,
                    message: e.to_string(),
                })?;
        }
        Ok(if batches.is_empty() {
            0.0
        } else {
            total / batches.len() as f64
        })
    }

    fn generate(&self, input: &str, params: &DecodeParams) -> Result<String, AdapterError> {
        let src_ids = encode_bytes(input, self.input_limit);
        let (src, src_mask) = pad_batch(&[src_ids], &self.device)?;
        let memory = self.model.encode(&src, &src_mask)?;
        let budget = params.max_new_tokens.min(self.target_limit - 1);
        let mut out = vec![BOS];
        while out.len() <= budget {
            let tgt = Tensor::new(out.as_slice(), &self.device)?.unsqueeze(0)?;
            let logits = self.model.decode(&tgt, &memory, &src_mask)?;
            let last = logits.i((0, out.len() - 1))?;
            let next = last.argmax(D::Minus1)?.to_scalar::<u32>()?;
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(decode_bytes(&out[1..]))
    }

    fn save(&self, dir: &Path) -> Result<(), AdapterError> {
        let err = |path: &Path, e: &dyn std::fmt::Display| AdapterError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
        let config_path = dir.join("config.json");
        let bytes = serde_json::to_vec_pretty(&self.config).map_err(|e| err(&config_path, &e))?;
        crate::jsonl::write_atomic(&config_path, &bytes).map_err(|e| err(&config_path, &e))?;
        let tensors: HashMap<String, Tensor> = self
            .model
            .vars
            .iter()
            .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
            .collect();
        let weights = dir.join("model.safetensors");
        candle_core::safetensors::save(&tensors, &weights).map_err(|e| err(&weights, &e))
    }

    fn load(&mut self, dir: &Path) -> Result<(), AdapterError> {
        let err = |path: &Path, e: &dyn std::fmt::Display| AdapterError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let config_path = dir.join("config.json");
        let bytes = std::fs::read(&config_path).map_err(|e| err(&config_path, &e))?;
        let config: Seq2SeqConfig =
            serde_json::from_slice(&bytes).map_err(|e| err(&config_path, &e))?;
        let weights = dir.join("model.safetensors");
        let tensors = candle_core::safetensors::load(&weights, &self.device)
            .map_err(|e| err(&weights, &e))?;
        let mut fresh = Seq2SeqAdapter::new(config)?;
        for (name, var) in &fresh.model.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| err(&weights, &format!("missing tensor {name}")))?;
            var.set(t).map_err(|e| err(&weights, &e))?;
        }
        fresh.learning_rate = self.learning_rate;
        fresh.weight_decay = self.weight_decay;
        fresh.input_limit = self.input_limit.min(fresh.config.max_input_tokens);
        fresh.target_limit = self.target_limit.min(fresh.config.max_target_tokens);
        *self = fresh;
        Ok(())
    }

    fn concurrent_generation(&self) -> bool {
        true
    }
}
