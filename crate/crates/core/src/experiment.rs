//! End-to-end runs: build data, train, score on validation/IID/OOD.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_vocab, prepare_all, LossMask, PreparedExample};
use crate::evaluator::{evaluate, EvalError, EvalReport, ModelEmitter};
use crate::model::{init_params, LoraSet, ModelConfig, ParamStore, Transformer};
use crate::stg::{generate, AnswerKind, GenOptions, Split, StgError, StgExample, Variant};
use crate::tokenizer::{TokenizerError, Vocab};
use crate::trainer::{train, AdamW, Mode, RunRecord, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Stg(#[from] StgError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("invalid alpha grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Splits of one benchmark with a shared vocabulary.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub kind: AnswerKind,
    pub vocab: Vocab,
    pub train: Vec<StgExample>,
    pub valid: Vec<StgExample>,
    pub iid_test: Vec<StgExample>,
    pub ood_test: Vec<StgExample>,
}

impl Benchmark {
    pub fn generate(variant: &dyn Variant, train: usize, valid: usize, test: usize, ood: usize, seed: u64) -> Result<Self, ExperimentError> {
        let schema = variant.schema();
        let opts = GenOptions::default();
        let train = generate(&schema, train, Split::IidTrain, seed, opts)?;
        let valid = if valid == 0 { Vec::new() } else { generate(&schema, valid, Split::IidValid, seed, opts)? };
        let iid_test = generate(&schema, test, Split::IidTest, seed, opts)?;
        let ood_test = generate(&schema, ood, Split::OodTest, seed, opts)?;
        Ok(Self { kind: variant.answer_kind(), vocab: build_vocab(&train)?, train, valid, iid_test, ood_test })
    }

    pub fn from_splits(kind: AnswerKind, train: Vec<StgExample>, valid: Vec<StgExample>, iid_test: Vec<StgExample>, ood_test: Vec<StgExample>) -> Result<Self, ExperimentError> {
        Ok(Self { kind, vocab: build_vocab(&train)?, train, valid, iid_test, ood_test })
    }

    pub fn prepared_train(&self, mask: LossMask) -> Vec<PreparedExample> {
        prepare_all(&self.train, &self.vocab, mask)
    }

    /// Longest full sequence over all splits.
    pub fn max_len(&self) -> usize {
        [&self.train, &self.valid, &self.iid_test, &self.ood_test]
            .iter()
            .flat_map(|s| s.iter())
            .map(|e| prepare_all(std::slice::from_ref(e), &self.vocab, LossMask::AnswerOnly)[0].encoding.len())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: ParamStore<f32>,
    pub lora: Option<LoraSet<f32>>,
    pub record: RunRecord,
    pub optimizer: AdamW,
    pub valid: Option<EvalReport>,
    pub iid: EvalReport,
    pub ood: EvalReport,
}

pub fn accuracy_on(
    model: &ModelConfig,
    params: &ParamStore<f32>,
    lora: Option<&LoraSet<f32>>,
    vocab: &Vocab,
    examples: &[StgExample],
    kind: AnswerKind,
) -> Result<EvalReport, EvalError> {
    let emitter = ModelEmitter { model: Transformer::new(model, params).with_lora(lora), vocab };
    evaluate(&emitter, examples, kind)
}

/// Initializes from `cfg.seed`, trains on the benchmark's train split and
/// scores every split.
pub fn run(bench: &Benchmark, model: &ModelConfig, cfg: &TrainConfig) -> Result<RunOutcome, ExperimentError> {
    let data = bench.prepared_train(cfg.loss_mask);
    let mut params = init_params::<f32>(model, cfg.seed)?;
    let mut lora = match &cfg.lora {
        Some(l) => Some(LoraSet::init(model, l.clone(), cfg.seed)?),
        None => None,
    };
    let mut hook = |_: usize, _: &ParamStore<f32>, _: Option<&LoraSet<f32>>| None;
    let (record, optimizer) = train(model, &mut params, lora.as_mut(), &data, cfg, &mut hook)?;
    let score = |ex: &[StgExample]| accuracy_on(model, &params, lora.as_ref(), &bench.vocab, ex, bench.kind);
    let valid = if bench.valid.is_empty() { None } else { Some(score(&bench.valid)?) };
    let iid = score(&bench.iid_test)?;
    let ood = score(&bench.ood_test)?;
    Ok(RunOutcome { params, lora, record, optimizer, valid, iid, ood })
}

/// Inclusive grid `start, start + step, ...` up to `stop`, with values
/// rounded to 10 decimals so `0.05:0.35:0.05` yields exactly 7 points.
pub fn alpha_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, ExperimentError> {
    if !(step > 0.0) || !(start > 0.0) || stop < start {
        return Err(ExperimentError::Grid(format!("{start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub mode: Mode,
    pub seed: u64,
    pub valid_accuracy: Option<f64>,
    pub iid_accuracy: f64,
    pub ood_accuracy: f64,
    pub final_frac_at_alpha: f64,
}

/// One CAT run per alpha; everything else in `base` is shared.
pub fn run_alpha_sweep(
    bench: &Benchmark,
    model: &ModelConfig,
    grid: &[f64],
    base: &TrainConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::Grid("empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let cfg = TrainConfig { alpha, ..base.clone() };
        let out = run(bench, model, &cfg)?;
        let row = sweep_row(&cfg, &out);
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn sweep_row(cfg: &TrainConfig, out: &RunOutcome) -> SweepRow {
    SweepRow {
        alpha: cfg.alpha,
        mode: cfg.mode,
        seed: cfg.seed,
        valid_accuracy: out.valid.as_ref().map(|r| r.accuracy),
        iid_accuracy: out.iid.accuracy,
        ood_accuracy: out.ood.accuracy,
        final_frac_at_alpha: out.record.epochs.last().map_or(0.0, |e| e.frac_at_alpha),
    }
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
