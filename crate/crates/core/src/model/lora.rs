use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{normal_tensor, ParamStore};
use super::{ModelConfig, ModelError};
use crate::autodiff::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Q,
    V,
}

impl LoraTarget {
    pub(crate) fn weight_suffix(self) -> &'static str {
        match self {
            LoraTarget::Q => "wq",
            LoraTarget::V => "wv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    /// Effective weight is `base + scale * down * up`.
    pub scale: f64,
    pub targets: Vec<LoraTarget>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, scale: 2.0, targets: vec![LoraTarget::Q, LoraTarget::V] }
    }
}

/// Low-rank adapters for every head's Q and/or V projection. Parameters are
/// named `layers.{l}.heads.{h}.{wq|wv}.lora_down` / `.lora_up`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraSet<T> {
    pub config: LoraConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> LoraSet<T> {
    /// Down matrices are Normal(0, 1/rank); up matrices start at zero so the
    /// adapted model initially computes exactly the base model.
    pub fn init(model: &ModelConfig, config: LoraConfig, seed: u64) -> Result<Self, ModelError> {
        if config.rank == 0 {
            return Err(ModelError::Config("lora rank must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10_7a);
        let mut params = ParamStore::new();
        for l in 0..model.n_layers {
            for h in 0..model.n_heads {
                for &t in &config.targets {
                    let out = match t {
                        LoraTarget::Q => model.d_k,
                        LoraTarget::V => model.d_v,
                    };
                    let base = format!("layers.{l}.heads.{h}.{}", t.weight_suffix());
                    let std = 1.0 / config.rank as f64;
                    params.insert(format!("{base}.lora_down"), normal_tensor(&mut rng, vec![model.d_model, config.rank], std));
                    params.insert(
                        format!("{base}.lora_up"),
                        Tensor::zeros(vec![config.rank, out]).with_grad(),
                    );
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn has(&self, layer: usize, head: usize, target: LoraTarget) -> bool {
        self.config.targets.contains(&target)
            && self.params.get(&format!("layers.{layer}.heads.{head}.{}.lora_down", target.weight_suffix())).is_ok()
    }
}
