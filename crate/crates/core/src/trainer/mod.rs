//! Training loop: `L_total = L_next + gamma * L_attn` under AdamW with a
//! warmup-plus-cosine learning rate.
//!
//! Each example is run through its own graph (no padding), scaled by one over
//! the effective batch size and backpropagated; per-example gradients are then
//! summed in example order, so results do not depend on the worker count.

mod optim;
mod schedule;

pub use optim::{AdamW, AdamWConfig};
pub use schedule::{gamma_schedules, lr_schedule, Constant, EpochDecay, EpochDecayOneBased, GammaSchedule};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::dataset::{LossMask, PreparedExample};
use crate::model::{LoraConfig, LoraSet, ModelConfig, ModelError, ParamStore, Transformer};
use crate::registry::UnknownName;
use crate::supervision::{attn_ratio_terms, re_attention_loss, SupervisionError, NONCAUSAL_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss in batch {batch} (epoch {epoch})")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Schedule(#[from] UnknownName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cat,
    Vanilla,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cat" => Ok(Mode::Cat),
            "vanilla" => Ok(Mode::Vanilla),
            other => Err(format!("unknown mode {other:?} (expected cat or vanilla)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub alpha: f64,
    /// Name in [`gamma_schedules`].
    pub gamma_schedule: String,
    /// Used by the `constant` schedule.
    pub gamma_value: f64,
    pub lr: f64,
    pub warmup: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub lora: Option<LoraConfig>,
    pub loss_mask: LossMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cat,
            alpha: 0.3,
            gamma_schedule: "epoch_decay".into(),
            gamma_value: 1.0,
            lr: 1e-3,
            warmup: 0.1,
            epochs: 20,
            batch_size: 16,
            grad_accum: 1,
            seed: 42,
            optimizer: AdamWConfig::default(),
            lora: None,
            loss_mask: LossMask::AnswerOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return bad("epochs, batch_size and grad_accum must be at least 1");
        }
        if !(self.lr >= 0.0) || !(0.0..=1.0).contains(&self.warmup) {
            return bad("lr must be nonnegative and warmup within [0, 1]");
        }
        gamma_schedules().get(&self.gamma_schedule)?;
        Ok(())
    }

    pub fn gamma(&self, epoch: usize) -> f64 {
        match self.mode {
            Mode::Vanilla => 0.0,
            Mode::Cat => gamma_schedules()
                .get(&self.gamma_schedule)
                .map(|s| s.gamma(epoch, self.gamma_value))
                .unwrap_or(f64::NAN),
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size).div_ceil(self.grad_accum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub l_next: f64,
    pub l_attn: f64,
    pub gamma: f64,
    pub lr: f64,
    pub supervised_rows: usize,
    pub rows_at_alpha: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub gamma: f64,
    pub l_next: f64,
    pub l_attn: f64,
    /// Share of supervised rows whose ratio reached alpha.
    pub frac_at_alpha: f64,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub threads: usize,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub wall_seconds: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RecordLine<'a> {
    Config { config: &'a TrainConfig, model: &'a ModelConfig, threads: usize },
    Step(&'a StepLog),
    Epoch(&'a EpochLog),
    Summary { wall_seconds: f64 },
}

impl RunRecord {
    /// One JSON object per line: config, steps, epochs, summary.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![RecordLine::Config { config: &self.config, model: &self.model, threads: self.threads }];
        lines.extend(self.steps.iter().map(RecordLine::Step));
        lines.extend(self.epochs.iter().map(RecordLine::Epoch));
        lines.push(RecordLine::Summary { wall_seconds: self.wall_seconds });
        lines.iter().map(|l| serde_json::to_string(l).expect("record serializes") + "\n").collect()
    }

    /// Equality ignoring wall-clock time.
    pub fn same_trace(&self, other: &RunRecord) -> bool {
        self.steps == other.steps && self.epochs == other.epochs
    }
}

/// Forward/backward result of one example.
struct ExampleOut {
    l_next: f64,
    l_attn: f64,
    supervised: usize,
    at_alpha: usize,
    grads: Vec<Option<Vec<f32>>>,
}

fn example_pass(
    model: Transformer<'_, f32>,
    ex: &PreparedExample,
    cfg: &TrainConfig,
    gamma: f32,
    weight: f32,
    train_lora: bool,
) -> Result<ExampleOut, TrainError> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &ex.input_ids)?;
    let ce = g.cross_entropy_from_logits(out.logits, &ex.targets)?;
    let terms = attn_ratio_terms(&mut g, &ex.adjacency, out.capture.average)?;
    let attn = re_attention_loss(&mut g, &terms, cfg.alpha)?;
    let at_alpha = terms
        .terms
        .iter()
        .filter(|t| {
            let c = g.scalar_value(t.causal) as f64;
            let n = (g.scalar_value(t.noncausal) as f64).max(NONCAUSAL_FLOOR);
            c / n >= cfg.alpha
        })
        .count();
    let l_next = g.scalar_value(ce) as f64;
    let l_attn = g.scalar_value(attn) as f64;
    let loss = match cfg.mode {
        Mode::Cat => {
            let weighted = g.scale(attn, gamma);
            g.add(ce, weighted)?
        }
        Mode::Vanilla => ce,
    };
    let loss = g.scale(loss, weight);
    let mut grads = g.backward(loss)?;
    let vars = if train_lora { &out.adapters } else { &out.params };
    Ok(ExampleOut {
        l_next,
        l_attn,
        supervised: terms.terms.len(),
        at_alpha,
        grads: vars.iter().map(|&v| grads.take(v)).collect(),
    })
}

fn accumulate(total: &mut [Option<Vec<f32>>], part: Vec<Option<Vec<f32>>>) {
    for (t, p) in total.iter_mut().zip(part) {
        let Some(p) = p else { continue };
        match t {
            Some(t) => t.iter_mut().zip(&p).for_each(|(a, b)| *a += b),
            None => *t = Some(p),
        }
    }
}

/// Called after every epoch with the current weights; may return a
/// validation accuracy to log.
pub type EpochHook<'h> = dyn FnMut(usize, &ParamStore<f32>, Option<&LoraSet<f32>>) -> Option<f64> + 'h;

/// Trains `params` (or only `lora` when given) in place.
pub fn train(
    model: &ModelConfig,
    params: &mut ParamStore<f32>,
    mut lora: Option<&mut LoraSet<f32>>,
    data: &[PreparedExample],
    cfg: &TrainConfig,
    on_epoch: &mut EpochHook<'_>,
) -> Result<(RunRecord, AdamW), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let start = Instant::now();
    let train_lora = lora.is_some();
    if train_lora {
        params.set_requires_grad(false);
    }
    let mut opt = AdamW::new(cfg.optimizer);
    let total_steps = cfg.epochs * cfg.steps_per_epoch(data.len());
    let effective = cfg.batch_size * cfg.grad_accum;
    let mut record = RunRecord {
        config: cfg.clone(),
        model: model.clone(),
        threads: rayon::current_num_threads(),
        steps: Vec::new(),
        epochs: Vec::new(),
        wall_seconds: 0.0,
    };

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let gamma = cfg.gamma(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut ep_next, mut ep_attn, mut ep_sup, mut ep_at) = (0.0, 0.0, 0usize, 0usize);
        for (batch_idx, group) in order.chunks(effective).enumerate() {
            let weight = 1.0 / group.len() as f32;
            let outs: Vec<Result<ExampleOut, TrainError>> = {
                let model_view = Transformer::new(model, params).with_lora(lora.as_deref());
                group
                    .par_iter()
                    .map(|&i| example_pass(model_view, &data[i], cfg, gamma as f32, weight, train_lora))
                    .collect()
            };
            let n_slots = if train_lora { lora.as_ref().map_or(0, |l| l.params.len()) } else { params.len() };
            let mut grads: Vec<Option<Vec<f32>>> = vec![None; n_slots];
            let (mut l_next, mut l_attn, mut sup, mut at) = (0.0, 0.0, 0, 0);
            for out in outs {
                let out = out?;
                if !out.l_next.is_finite() || !out.l_attn.is_finite() {
                    return Err(TrainError::NonFinite { epoch, batch: batch_idx });
                }
                l_next += out.l_next;
                l_attn += out.l_attn;
                sup += out.supervised;
                at += out.at_alpha;
                accumulate(&mut grads, out.grads);
            }
            l_next /= group.len() as f64;
            l_attn /= group.len() as f64;
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.lr, cfg.warmup);
            match lora.as_deref_mut() {
                Some(l) => opt.update(&mut l.params, &grads, lr),
                None => opt.update(params, &grads, lr),
            }
            record.steps.push(StepLog { epoch, step, l_next, l_attn, gamma, lr, supervised_rows: sup, rows_at_alpha: at });
            ep_next += l_next * group.len() as f64;
            ep_attn += l_attn * group.len() as f64;
            ep_sup += sup;
            ep_at += at;
        }
        let valid_accuracy = on_epoch(epoch, params, lora.as_deref());
        record.epochs.push(EpochLog {
            epoch,
            gamma,
            l_next: ep_next / data.len() as f64,
            l_attn: ep_attn / data.len() as f64,
            frac_at_alpha: if ep_sup == 0 { 1.0 } else { ep_at as f64 / ep_sup as f64 },
            valid_accuracy,
        });
    }
    if train_lora {
        params.set_requires_grad(true);
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok((record, opt))
}

#[cfg(test)]
mod tests;
