use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::checkpoint::OptimizerState;
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay, moments kept per parameter name.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: IndexMap<String, Vec<f32>>,
    v: IndexMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Vec<f32>>], lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((name, p), g) in params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            step_tensor(p, g, m, v, lr, c, bc1, bc2);
        }
    }

    pub fn state(&self) -> OptimizerState {
        let mut buffers = IndexMap::new();
        for (k, b) in &self.m {
            buffers.insert(format!("m.{k}"), b.clone());
        }
        for (k, b) in &self.v {
            buffers.insert(format!("v.{k}"), b.clone());
        }
        OptimizerState { step: self.step, buffers }
    }

    pub fn from_state(config: AdamWConfig, state: &OptimizerState) -> Self {
        let mut out = Self::new(config);
        out.step = state.step;
        for (k, b) in &state.buffers {
            if let Some(name) = k.strip_prefix("m.") {
                out.m.insert(name.to_string(), b.clone());
            } else if let Some(name) = k.strip_prefix("v.") {
                out.v.insert(name.to_string(), b.clone());
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn step_tensor(p: &mut Tensor<f32>, g: &[f32], m: &mut [f32], v: &mut [f32], lr: f64, c: AdamWConfig, bc1: f64, bc2: f64) {
    let data = p.data_mut();
    for i in 0..data.len() {
        let gi = g[i] as f64;
        let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * gi;
        let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * gi * gi;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = (mi / bc1) / ((vi / bc2).sqrt() + c.eps) + c.weight_decay * data[i] as f64;
        data[i] = (data[i] as f64 - lr * update) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap().with_grad());
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.update(&mut p, &[Some(vec![0.3, -4.0, 0.0])], 0.1);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - -1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![2.0f32]).unwrap().with_grad());
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.update(&mut p, &[Some(vec![0.0])], 0.1);
        assert!((p.get("w").unwrap().data()[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-6);
    }

    #[test]
    fn state_round_trip() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0f32, 1.0]).unwrap().with_grad());
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.update(&mut p, &[Some(vec![1.0, 2.0])], 0.01);
        let back = AdamW::from_state(AdamWConfig::default(), &opt.state());
        assert_eq!(back.state(), opt.state());
    }
}
