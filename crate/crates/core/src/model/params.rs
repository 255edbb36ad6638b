use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::autodiff::{Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { entries: IndexMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.entries.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.values()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.values_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for t in self.entries.values_mut() {
            t.requires_grad = on;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

pub(crate) fn normal_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches data").with_grad()
}

fn constant_tensor<T: Scalar>(shape: Vec<usize>, v: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, vec![T::from_f64(v); n]).expect("shape matches data").with_grad()
}

/// Normal(0, 0.02) weights and embeddings; unit layer-norm gains; zero biases.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, v) = (config.d_model, config.vocab_size);
    let f = config.ffn_dim();
    let mut p = ParamStore::new();
    p.insert("tok_emb", normal_tensor(&mut rng, vec![v, d], INIT_STD));
    for l in 0..config.n_layers {
        p.insert(format!("layers.{l}.ln1.gain"), constant_tensor(vec![d], 1.0));
        p.insert(format!("layers.{l}.ln1.bias"), constant_tensor(vec![d], 0.0));
        for h in 0..config.n_heads {
            p.insert(format!("layers.{l}.heads.{h}.wq"), normal_tensor(&mut rng, vec![d, config.d_k], INIT_STD));
            p.insert(format!("layers.{l}.heads.{h}.wk"), normal_tensor(&mut rng, vec![d, config.d_k], INIT_STD));
            p.insert(format!("layers.{l}.heads.{h}.wv"), normal_tensor(&mut rng, vec![d, config.d_v], INIT_STD));
        }
        p.insert(format!("layers.{l}.wo"), normal_tensor(&mut rng, vec![config.n_heads * config.d_v, d], INIT_STD));
        p.insert(format!("layers.{l}.ln2.gain"), constant_tensor(vec![d], 1.0));
        p.insert(format!("layers.{l}.ln2.bias"), constant_tensor(vec![d], 0.0));
        p.insert(format!("layers.{l}.ffn.w1"), normal_tensor(&mut rng, vec![d, f], INIT_STD));
        p.insert(format!("layers.{l}.ffn.b1"), constant_tensor(vec![f], 0.0));
        p.insert(format!("layers.{l}.ffn.w2"), normal_tensor(&mut rng, vec![f, d], INIT_STD));
        p.insert(format!("layers.{l}.ffn.b2"), constant_tensor(vec![d], 0.0));
    }
    p.insert("ln_f.gain", constant_tensor(vec![d], 1.0));
    p.insert("ln_f.bias", constant_tensor(vec![d], 0.0));
    p.insert("lm_head", normal_tensor(&mut rng, vec![d, v], INIT_STD));
    Ok(p)
}
