//! Decoder-only transformer on top of [`crate::autodiff`].
//!
//! Pre-norm residual blocks with fixed sinusoidal positions. Every head's
//! attention map is kept as a graph node so losses defined on attention can
//! backpropagate through it.

pub mod checkpoint;
mod lora;
mod params;

pub use lora::{LoraConfig, LoraSet, LoraTarget};
pub use params::{init_params, ParamStore, INIT_STD};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Scalar, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds the maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    Empty,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub ffn_mult: usize,
    pub positional: Positional,
}

impl ModelConfig {
    /// L=2, H=4, d_model=128, d_k=d_v=32, 4x feed-forward.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            n_heads: 4,
            d_k: 32,
            d_v: 32,
            n_layers: 2,
            max_seq_len: 128,
            ffn_mult: 4,
            positional: Positional::Sinusoidal,
        }
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return bad("sizes must be positive");
        }
        if self.d_k == 0 || self.d_v == 0 || self.max_seq_len == 0 || self.ffn_mult == 0 {
            return bad("sizes must be positive");
        }
        if self.n_heads * self.d_v != self.d_model {
            return bad("d_model must equal n_heads * d_v");
        }
        if self.d_model % 2 != 0 {
            return bad("sinusoidal positions need an even d_model");
        }
        Ok(())
    }

    /// Closed-form count of [`init_params`] parameters.
    pub fn param_count(&self) -> usize {
        let (d, v, h, f) = (self.d_model, self.vocab_size, self.n_heads, self.ffn_dim());
        let attn = h * (2 * d * self.d_k + d * self.d_v) + h * self.d_v * d;
        let ffn = d * f + f + f * d + d;
        let per_layer = 4 * d + attn + ffn;
        v * d + self.n_layers * per_layer + 2 * d + d * v
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for p in 0..n {
        for i in (0..d).step_by(2) {
            let angle = p as f64 / 10000f64.powf(i as f64 / d as f64);
            out[p * d + i] = angle.sin();
            out[p * d + i + 1] = angle.cos();
        }
    }
    out
}

/// Attention maps recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionCapture {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Layer-major: `maps[l * n_heads + h]`, each `n x n`.
    pub maps: Vec<Var>,
    /// Entrywise mean of all maps.
    pub average: Var,
}

impl AttentionCapture {
    pub fn map(&self, layer: usize, head: usize) -> Var {
        self.maps[layer * self.n_heads + head]
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `n x vocab` next-token logits.
    pub logits: Var,
    pub capture: AttentionCapture,
    /// Graph handles for the base parameters, in store order.
    pub params: Vec<Var>,
    /// Graph handles for adapter parameters, in store order.
    pub adapters: Vec<Var>,
}

/// Borrowed view of a model: configuration, weights and optional adapters.
#[derive(Debug, Clone, Copy)]
pub struct Transformer<'a, T> {
    pub config: &'a ModelConfig,
    pub params: &'a ParamStore<T>,
    pub lora: Option<&'a LoraSet<T>>,
}

impl<'a, T: Scalar> Transformer<'a, T> {
    pub fn new(config: &'a ModelConfig, params: &'a ParamStore<T>) -> Self {
        Self { config, params, lora: None }
    }

    pub fn with_lora(mut self, lora: Option<&'a LoraSet<T>>) -> Self {
        self.lora = lora;
        self
    }

    pub fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Empty);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::TooLong { len: ids.len(), max: self.config.max_seq_len });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab: self.config.vocab_size });
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<T>, ids: &[u32]) -> Result<ForwardOutput, ModelError> {
        self.check_ids(ids)?;
        let cfg = self.config;
        let n = ids.len();
        let d = cfg.d_model;

        let mut bound = indexmap::IndexMap::new();
        for (name, t) in self.params.iter() {
            bound.insert(name.to_string(), g.leaf(t));
        }
        let mut adapter_vars = indexmap::IndexMap::new();
        if let Some(lora) = self.lora {
            for (name, t) in lora.params.iter() {
                adapter_vars.insert(name.to_string(), g.leaf(t));
            }
        }
        let p = |name: &str| bound.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()));

        let ids_usize: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let emb = g.embedding_lookup(p("tok_emb")?, &ids_usize)?;
        let pe = sinusoidal_positions(n, d).into_iter().map(T::from_f64).collect();
        let pe = g.constant(vec![n, d], pe)?;
        let mut x = g.add(emb, pe)?;

        let inv_sqrt_dk = T::from_f64(1.0 / (cfg.d_k as f64).sqrt());
        let mut maps = Vec::with_capacity(cfg.n_layers * cfg.n_heads);
        for l in 0..cfg.n_layers {
            let a = g.layer_norm(x, p(&format!("layers.{l}.ln1.gain"))?, p(&format!("layers.{l}.ln1.bias"))?)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let prefix = format!("layers.{l}.heads.{h}");
                let wq = self.adapted(g, &adapter_vars, p(&format!("{prefix}.wq"))?, &prefix, LoraTarget::Q)?;
                let wk = p(&format!("{prefix}.wk"))?;
                let wv = self.adapted(g, &adapter_vars, p(&format!("{prefix}.wv"))?, &prefix, LoraTarget::V)?;
                let q = g.matmul(a, wq)?;
                let k = g.matmul(a, wk)?;
                let v = g.matmul(a, wv)?;
                let kt = g.transpose(k)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, inv_sqrt_dk);
                let attn = g.softmax_rows_masked(scores)?;
                maps.push(attn);
                heads.push(g.matmul(attn, v)?);
            }
            let z = g.concat_last_dim(&heads)?;
            let o = g.matmul(z, p(&format!("layers.{l}.wo"))?)?;
            x = g.add(x, o)?;

            let b = g.layer_norm(x, p(&format!("layers.{l}.ln2.gain"))?, p(&format!("layers.{l}.ln2.bias"))?)?;
            let hdn = g.matmul(b, p(&format!("layers.{l}.ffn.w1"))?)?;
            let hdn = g.add_row(hdn, p(&format!("layers.{l}.ffn.b1"))?)?;
            let hdn = g.gelu(hdn);
            let out = g.matmul(hdn, p(&format!("layers.{l}.ffn.w2"))?)?;
            let out = g.add_row(out, p(&format!("layers.{l}.ffn.b2"))?)?;
            x = g.add(x, out)?;
        }
        let x = g.layer_norm(x, p("ln_f.gain")?, p("ln_f.bias")?)?;
        let logits = g.matmul(x, p("lm_head")?)?;

        let mut total = maps[0];
        for &m in &maps[1..] {
            total = g.add(total, m)?;
        }
        let average = g.scale(total, T::from_f64(1.0 / maps.len() as f64));

        Ok(ForwardOutput {
            logits,
            capture: AttentionCapture { n_layers: cfg.n_layers, n_heads: cfg.n_heads, maps, average },
            params: bound.into_values().collect(),
            adapters: adapter_vars.into_values().collect(),
        })
    }

    fn adapted(
        &self,
        g: &mut Graph<T>,
        adapters: &indexmap::IndexMap<String, Var>,
        base: Var,
        prefix: &str,
        target: LoraTarget,
    ) -> Result<Var, ModelError> {
        let Some(lora) = self.lora else { return Ok(base) };
        let key = format!("{prefix}.{}", target.weight_suffix());
        let (Some(&down), Some(&up)) = (adapters.get(&format!("{key}.lora_down")), adapters.get(&format!("{key}.lora_up"))) else {
            return Ok(base);
        };
        let delta = g.matmul(down, up)?;
        let delta = g.scale(delta, T::from_f64(lora.config.scale));
        Ok(g.add(base, delta)?)
    }

    /// Logits for every position, without recording gradients.
    pub fn logits(&self, ids: &[u32]) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::no_grad();
        let out = self.forward(&mut g, ids)?;
        Ok(g.to_tensor(out.logits))
    }

    /// Appends argmax tokens until `eos`, `max_new_tokens` or the context limit.
    pub fn generate_greedy(&self, prompt: &[u32], max_new_tokens: usize, eos: Option<u32>) -> Result<Vec<u32>, ModelError> {
        self.check_ids(prompt)?;
        let mut seq = prompt.to_vec();
        for _ in 0..max_new_tokens {
            if seq.len() >= self.config.max_seq_len {
                break;
            }
            let logits = self.logits(&seq)?;
            let next = argmax(logits.row(seq.len() - 1)) as u32;
            seq.push(next);
            if Some(next) == eos {
                break;
            }
        }
        Ok(seq)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
