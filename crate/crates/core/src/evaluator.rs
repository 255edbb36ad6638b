//! Accuracy on benchmark splits and attention statistics per factor class.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::dataset::{encode_prompt, PreparedExample};
use crate::model::{ModelError, Transformer};
use crate::registry::Registry;
use crate::stg::{AnswerKind, FactorRole, StgExample, StgSchema, Split, HIGH_RISK, LOW_RISK};
use crate::supervision::row_ratios;
use crate::tokenizer::Vocab;

pub const MAX_NEW_TOKENS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("test set is empty")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Produces an answer string for a benchmark record.
pub trait AnswerEmitter: Send + Sync {
    fn emit(&self, index: usize, example: &StgExample) -> Result<String, EvalError>;
}

/// Greedy decoding from the question prompt.
pub struct ModelEmitter<'a> {
    pub model: Transformer<'a, f32>,
    pub vocab: &'a Vocab,
}

impl AnswerEmitter for ModelEmitter<'_> {
    fn emit(&self, _: usize, example: &StgExample) -> Result<String, EvalError> {
        let prompt = encode_prompt(self.vocab, &example.question);
        let seq = self.model.generate_greedy(&prompt.ids, MAX_NEW_TOKENS, Some(Vocab::EOS_ID))?;
        let new: Vec<u32> = seq[prompt.ids.len()..].iter().copied().take_while(|&t| t != Vocab::EOS_ID).collect();
        Ok(self.vocab.decode(&new).join(" "))
    }
}

/// Applies the schema's answer rule to the record's factors.
pub struct OracleEmitter(pub StgSchema);

impl AnswerEmitter for OracleEmitter {
    fn emit(&self, _: usize, example: &StgExample) -> Result<String, EvalError> {
        Ok(self.0.answer_for(&example.factors))
    }
}

/// Always answers the same thing.
pub struct ConstantEmitter(pub String);

impl AnswerEmitter for ConstantEmitter {
    fn emit(&self, _: usize, _: &StgExample) -> Result<String, EvalError> {
        Ok(self.0.clone())
    }
}

/// Fair coin between the two labels, seeded per record index.
pub struct CoinEmitter {
    pub seed: u64,
}

impl AnswerEmitter for CoinEmitter {
    fn emit(&self, index: usize, _: &StgExample) -> Result<String, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        Ok(if rng.gen_bool(0.5) { HIGH_RISK } else { LOW_RISK }.to_string())
    }
}

/// Reference emitters that need no trained model.
pub fn baseline_emitters(schema: &StgSchema, seed: u64) -> Registry<dyn AnswerEmitter> {
    let mut r: Registry<dyn AnswerEmitter> = Registry::new("emitter");
    r.register("oracle", Box::new(OracleEmitter(schema.clone())));
    r.register("high", Box::new(ConstantEmitter(HIGH_RISK.into())));
    r.register("low", Box::new(ConstantEmitter(LOW_RISK.into())));
    r.register("coin", Box::new(CoinEmitter { seed }));
    r
}

/// Extracts the answer from generated text: a label must match one of the
/// literal labels; an integer is the last run of digits.
pub fn parse_answer(kind: AnswerKind, generated: &str) -> Option<String> {
    let words: Vec<&str> = generated.split_whitespace().collect();
    match kind {
        AnswerKind::Label => {
            let text = words.join(" ");
            [HIGH_RISK, LOW_RISK].into_iter().find(|l| text == *l).map(str::to_string)
        }
        AnswerKind::Integer => {
            let is_digit = |w: &&str| !w.is_empty() && w.chars().all(|c| c.is_ascii_digit());
            let end = words.iter().rposition(is_digit)? + 1;
            let start = words[..end].iter().rposition(|w| !is_digit(w)).map_or(0, |p| p + 1);
            let digits: String = words[start..end].concat();
            digits.parse::<u64>().ok().map(|v| v.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub expected: String,
    pub generated: String,
    pub parsed: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Option<Split>,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub unparseable: usize,
    /// Integer answers only: share within 5 of the target.
    pub within5_accuracy: Option<f64>,
    /// Integer answers only; unparseable answers are excluded.
    pub mae: Option<f64>,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate(emitter: &dyn AnswerEmitter, examples: &[StgExample], kind: AnswerKind) -> Result<EvalReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let generated: Vec<Result<String, EvalError>> =
        examples.par_iter().enumerate().map(|(i, ex)| emitter.emit(i, ex)).collect();
    let mut predictions = Vec::with_capacity(examples.len());
    let (mut within5, mut abs_err, mut parsed_ints) = (0usize, 0.0, 0usize);
    for (i, (ex, gen)) in examples.iter().zip(generated).enumerate() {
        let generated = gen?;
        let parsed = parse_answer(kind, &generated);
        let correct = parsed.as_deref() == Some(ex.answer.as_str());
        if let (AnswerKind::Integer, Some(p)) = (kind, &parsed) {
            if let (Ok(p), Ok(t)) = (p.parse::<f64>(), ex.answer.parse::<f64>()) {
                parsed_ints += 1;
                abs_err += (p - t).abs();
                if (p - t).abs() <= 5.0 {
                    within5 += 1;
                }
            }
        }
        predictions.push(Prediction { index: i, expected: ex.answer.clone(), generated, parsed, correct });
    }
    let total = examples.len();
    let correct = predictions.iter().filter(|p| p.correct).count();
    let integer = kind == AnswerKind::Integer;
    Ok(EvalReport {
        split: examples.first().map(|e| e.split),
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        unparseable: predictions.iter().filter(|p| p.parsed.is_none()).count(),
        within5_accuracy: integer.then(|| within5 as f64 / total as f64),
        mae: (integer && parsed_ints > 0).then(|| abs_err / parsed_ints as f64),
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorClass {
    Causal,
    Spurious,
    Irrelevant,
}

impl FactorClass {
    pub const ALL: [FactorClass; 3] = [FactorClass::Causal, FactorClass::Spurious, FactorClass::Irrelevant];

    pub fn of(role: &FactorRole) -> Self {
        match role {
            FactorRole::Causal { .. } => FactorClass::Causal,
            FactorRole::Spurious { .. } => FactorClass::Spurious,
            FactorRole::Irrelevant => FactorClass::Irrelevant,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FactorClass::Causal => "causal",
            FactorClass::Spurious => "spurious",
            FactorClass::Irrelevant => "irrelevant",
        }
    }
}

/// Token columns of each factor class in one encoded record; `None` when a
/// factor phrase cannot be found.
pub fn class_columns(vocab: &Vocab, schema: &StgSchema, ex: &StgExample, prepared: &PreparedExample) -> Option<[Vec<usize>; 3]> {
    let mut cols: [Vec<usize>; 3] = Default::default();
    for (name, value) in &ex.factors {
        let class = FactorClass::of(&schema.factor(name)?.role);
        let hits = vocab.locate_phrase(&prepared.encoding, &format!("{name}: {value}"));
        let span = hits.first()?;
        let k = FactorClass::ALL.iter().position(|c| *c == class).expect("class listed");
        cols[k].extend(span.positions().filter(|&j| j < prepared.input_ids.len()));
    }
    Some(cols)
}

/// Mean attention per class for one map restricted to `rows`.
pub fn class_means(map: &[f64], n: usize, rows: std::ops::Range<usize>, cols: &[Vec<usize>; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, c) in cols.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in rows.clone() {
            for &j in c.iter().filter(|&&j| j <= i) {
                sum += map[i * n + j];
                count += 1;
            }
        }
        out[k] = if count == 0 { 0.0 } else { sum / count as f64 };
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionDensity {
    /// Per-example class means, ordered causal, spurious, irrelevant.
    pub per_example: Vec<[f64; 3]>,
    /// Raw averaged-map entries at answer rows, by class.
    pub samples: [Vec<f64>; 3],
    pub skipped: usize,
    /// Supervised-row ratios `C_i / N_i` on the same records.
    pub ratios: Vec<f64>,
}

impl AttentionDensity {
    /// Share of examples whose causal mean exceeds their spurious mean.
    pub fn causal_over_spurious(&self) -> f64 {
        if self.per_example.is_empty() {
            return 0.0;
        }
        self.per_example.iter().filter(|m| m[0] > m[1]).count() as f64 / self.per_example.len() as f64
    }

    pub fn fraction_at_alpha(&self, alpha: f64) -> f64 {
        if self.ratios.is_empty() {
            return 0.0;
        }
        self.ratios.iter().filter(|&&r| r >= alpha).count() as f64 / self.ratios.len() as f64
    }

    pub fn class_mean(&self, class: FactorClass) -> f64 {
        let k = FactorClass::ALL.iter().position(|c| *c == class).expect("class listed");
        let s = &self.samples[k];
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }
}

/// Averaged attention map of a teacher-forced pass, as `f64`.
pub fn average_map(model: Transformer<'_, f32>, ids: &[u32]) -> Result<Vec<f64>, EvalError> {
    let mut g = Graph::no_grad();
    let out = model.forward(&mut g, ids)?;
    Ok(g.value(out.capture.average).iter().map(|&v| v as f64).collect())
}

/// Pools the averaged map at answer-prediction rows by factor class.
pub fn attention_by_class(
    model: Transformer<'_, f32>,
    vocab: &Vocab,
    schema: &StgSchema,
    examples: &[StgExample],
    prepared: &[PreparedExample],
) -> Result<AttentionDensity, EvalError> {
    let per: Vec<Result<Option<([f64; 3], [Vec<f64>; 3], Vec<f64>)>, EvalError>> = examples
        .par_iter()
        .zip(prepared.par_iter())
        .map(|(ex, p)| {
            let Some(cols) = class_columns(vocab, schema, ex, p) else { return Ok(None) };
            let n = p.input_ids.len();
            let map = average_map(model, &p.input_ids)?;
            let rows = p.answer_rows();
            let means = class_means(&map, n, rows.clone(), &cols);
            let mut samples: [Vec<f64>; 3] = Default::default();
            for (k, c) in cols.iter().enumerate() {
                for i in rows.clone() {
                    samples[k].extend(c.iter().filter(|&&j| j <= i).map(|&j| map[i * n + j]));
                }
            }
            let ratios = row_ratios(&p.adjacency, &map)
                .map(|rs| rs.iter().map(|r| r.ratio()).collect())
                .unwrap_or_default();
            Ok(Some((means, samples, ratios)))
        })
        .collect();
    let mut out = AttentionDensity::default();
    for r in per {
        match r? {
            Some((means, samples, ratios)) => {
                out.per_example.push(means);
                for (k, s) in samples.into_iter().enumerate() {
                    out.samples[k].extend(s);
                }
                out.ratios.extend(ratios);
            }
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Fixed-width histogram over `[lo, hi]`; values outside are clamped into the
/// end bins.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 || hi <= lo {
        return counts;
    }
    for &s in samples {
        let k = (((s - lo) / (hi - lo)) * bins as f64).floor();
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}

/// CSV with columns `kind,class,value,bin_lo,bin_hi,count`: one `sample` row
/// per raw score, then one `bin` row per histogram bin on [0, 1].
pub fn write_density_csv<W: Write>(out: W, density: &AttentionDensity, bins: usize) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "class", "value", "bin_lo", "bin_hi", "count"])?;
    for (k, class) in FactorClass::ALL.iter().enumerate() {
        for v in &density.samples[k] {
            w.write_record(["sample", class.as_str(), &v.to_string(), "", "", ""])?;
        }
    }
    for (k, class) in FactorClass::ALL.iter().enumerate() {
        for (b, c) in histogram(&density.samples[k], bins, 0.0, 1.0).iter().enumerate() {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            w.write_record(["bin", class.as_str(), "", &lo.to_string(), &hi.to_string(), &c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Averaged attention map of one record as CSV. The header row and first
/// column hold `index:token` labels.
pub fn export_heatmap<W: Write>(out: W, model: Transformer<'_, f32>, vocab: &Vocab, ids: &[u32]) -> Result<(), EvalError> {
    let map = average_map(model, ids)?;
    let n = ids.len();
    let labels: Vec<String> = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| format!("{i}:{}", vocab.token(id).unwrap_or("<unk>")))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["token".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for i in 0..n {
        let mut row = vec![labels[i].clone()];
        row.extend(map[i * n..(i + 1) * n].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_vocab, prepare_all, LossMask};
    use crate::model::{init_params, ModelConfig};
    use crate::stg::{default_schema_e, generate_e};

    #[test]
    fn parsing() {
        assert_eq!(parse_answer(AnswerKind::Label, "Low Risk").as_deref(), Some("Low Risk"));
        assert_eq!(parse_answer(AnswerKind::Label, "Low"), None);
        assert_eq!(parse_answer(AnswerKind::Label, "High Risk Risk"), None);
        assert_eq!(parse_answer(AnswerKind::Integer, "5 7").as_deref(), Some("57"));
        assert_eq!(parse_answer(AnswerKind::Integer, "1 , 0 3").as_deref(), Some("3"));
        assert_eq!(parse_answer(AnswerKind::Integer, "Risk"), None);
        assert_eq!(parse_answer(AnswerKind::Integer, "0").as_deref(), Some("0"));
    }

    #[test]
    fn baselines() {
        let schema = default_schema_e();
        let test = generate_e(&schema, 10_000, Split::IidTest, 11).unwrap();
        let r = baseline_emitters(&schema, 42);
        let oracle = evaluate(r.get("oracle").unwrap(), &test, AnswerKind::Label).unwrap();
        assert_eq!(oracle.accuracy, 1.0);
        let prior = test.iter().filter(|e| e.answer == HIGH_RISK).count() as f64 / test.len() as f64;
        let high = evaluate(r.get("high").unwrap(), &test, AnswerKind::Label).unwrap();
        assert_eq!(high.accuracy, prior);
        let coin = evaluate(r.get("coin").unwrap(), &test, AnswerKind::Label).unwrap();
        assert!((coin.accuracy - 0.5).abs() < 0.02, "{}", coin.accuracy);
        assert!(evaluate(r.get("coin").unwrap(), &[], AnswerKind::Label).is_err());
    }

    #[test]
    fn integer_metrics() {
        let mut test = generate_e(&default_schema_e(), 2, Split::IidTest, 1).unwrap();
        test[0].answer = "50".into();
        test[1].answer = "10".into();
        let r = evaluate(&ConstantEmitter("5 3".into()), &test, AnswerKind::Integer).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.within5_accuracy, Some(0.5));
        assert_eq!(r.mae, Some((3.0 + 43.0) / 2.0));
    }

    #[test]
    fn class_means_on_synthetic_maps() {
        let n = 4;
        let uniform: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 })).collect();
        let cols = [vec![0], vec![1], vec![2]];
        let m = class_means(&uniform, n, 3..4, &cols);
        assert_eq!(m[0], m[1]);
        assert_eq!(m[1], m[2]);

        let mut focused = vec![0.0; n * n];
        focused[3 * n] = 0.7;
        focused[3 * n + 1] = 0.2;
        focused[3 * n + 3] = 0.1;
        let m = class_means(&focused, n, 3..4, &cols);
        assert!(m[0] > m[1] && m[1] > 0.0);
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(histogram(&[0.0, 0.05, 0.5, 1.0, 1.5], 10, 0.0, 1.0), vec![2, 0, 0, 0, 0, 1, 0, 0, 0, 2]);
    }

    #[test]
    fn attention_export_and_classes() {
        let schema = default_schema_e();
        let ex = generate_e(&schema, 3, Split::IidTest, 5).unwrap();
        let vocab = build_vocab(&ex).unwrap();
        let prepared = prepare_all(&ex, &vocab, LossMask::AnswerOnly);
        let cfg = ModelConfig { d_model: 16, d_k: 4, d_v: 4, ..ModelConfig::toy(vocab.len()) };
        let params = init_params(&cfg, 2).unwrap();
        let model = Transformer::new(&cfg, &params);

        let cols = class_columns(&vocab, &schema, &ex[0], &prepared[0]).unwrap();
        let expected: usize = ex[0]
            .factors
            .iter()
            .map(|(k, v)| k.split(' ').count() + 1 + v.to_string().len())
            .sum();
        assert_eq!(cols.iter().map(Vec::len).sum::<usize>(), expected);
        let words = vocab.decode(&prepared[0].input_ids);
        assert!(cols[0].iter().any(|&j| words[j] == "Smoking"));
        assert!(cols[1].iter().any(|&j| words[j] == "fingers"));

        let d = attention_by_class(model, &vocab, &schema, &ex, &prepared).unwrap();
        assert_eq!(d.per_example.len(), 3);
        assert_eq!(d.ratios.len(), 6);

        let mut buf = Vec::new();
        export_heatmap(&mut buf, model, &vocab, &prepared[0].input_ids).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), prepared[0].input_ids.len());
        for r in &rows {
            let s: f64 = r.iter().skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert_eq!(&rows[1][0], "1:Here");

        let mut dens = Vec::new();
        write_density_csv(&mut dens, &d, 10).unwrap();
        let text = String::from_utf8(dens).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("bin,")).count(), 30);
    }
}
