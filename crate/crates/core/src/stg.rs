//! Spurious Token Game benchmark generation.
//!
//! Each record draws causal and irrelevant factors uniformly from the inclusive
//! range [1, 10]. In-distribution splits derive every spurious factor from its
//! causal source as `floor(ratio * source)`; the OOD split draws spurious factors
//! independently from the same range. All arithmetic is exact integer math in
//! tenths so the class threshold never suffers from float rounding.

use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::registry::Registry;
use crate::supervision::CausalMap;

pub const VALUE_MIN: i64 = 1;
pub const VALUE_MAX: i64 = 10;

#[derive(Debug, thiserror::Error)]
pub enum StgError {
    #[error("count must be positive")]
    EmptyCount,
    #[error("schema {schema:?}: {msg}")]
    Schema { schema: String, msg: String },
    #[error("size {size:?} is not defined for variant {variant:?}")]
    Size { variant: String, size: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rational multiplier applied with floor: `floor(num * x / den)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i64,
    pub den: i64,
}

impl Ratio {
    pub const fn new(num: i64, den: i64) -> Self {
        Self { num, den }
    }

    pub fn apply(self, x: i64) -> i64 {
        (self.num * x).div_euclid(self.den)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FactorRole {
    /// Contributes `coef_tenths / 10` per unit to the score.
    Causal { coef_tenths: i64 },
    Spurious { source: String, ratio: Ratio },
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub role: FactorRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerRule {
    /// "High Risk" iff the causal score (in tenths) reaches the threshold.
    Threshold { threshold_tenths: i64 },
    /// Integer answer `clamp(round(g), lo, hi)` where
    /// `10 g = intercept + sum(coef * c) + interaction_coef * a * b`.
    Score {
        intercept_tenths: i64,
        interaction: (String, String, i64),
        lo: i64,
        hi: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StgSchema {
    pub name: String,
    pub intro: String,
    /// Causal, spurious and irrelevant factors in declaration order.
    pub factors: Vec<Factor>,
    /// Factor names in the order they appear in the rendered question.
    pub render_order: Vec<String>,
    pub rule: AnswerRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    IidTrain,
    IidValid,
    IidTest,
    OodTest,
}

impl Split {
    pub fn is_ood(self) -> bool {
        matches!(self, Split::OodTest)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::IidTrain => "iid_train",
            Split::IidValid => "iid_valid",
            Split::IidTest => "iid_test",
            Split::OodTest => "ood_test",
        }
    }

    fn stream_code(self) -> u64 {
        match self {
            Split::IidTrain => 1,
            Split::IidValid => 2,
            Split::IidTest => 3,
            Split::OodTest => 4,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "iid_train" | "train" => Ok(Split::IidTrain),
            "iid_valid" | "valid" => Ok(Split::IidValid),
            "iid_test" | "test" => Ok(Split::IidTest),
            "ood_test" | "ood" => Ok(Split::OodTest),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgExample {
    pub question: String,
    pub answer: String,
    pub split: Split,
    pub factors: IndexMap<String, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal_map: Option<CausalMap>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenOptions {
    pub shuffle_factors: bool,
}

impl StgSchema {
    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn causal(&self) -> impl Iterator<Item = (&str, i64)> {
        self.factors.iter().filter_map(|f| match f.role {
            FactorRole::Causal { coef_tenths } => Some((f.name.as_str(), coef_tenths)),
            _ => None,
        })
    }

    pub fn spurious(&self) -> impl Iterator<Item = (&str, &str, Ratio)> {
        self.factors.iter().filter_map(|f| match &f.role {
            FactorRole::Spurious { source, ratio } => Some((f.name.as_str(), source.as_str(), *ratio)),
            _ => None,
        })
    }

    pub fn irrelevant(&self) -> impl Iterator<Item = &str> {
        self.factors
            .iter()
            .filter(|f| f.role == FactorRole::Irrelevant)
            .map(|f| f.name.as_str())
    }

    pub fn validate(&self) -> Result<(), StgError> {
        let err = |msg: String| StgError::Schema { schema: self.name.clone(), msg };
        let mut seen = std::collections::HashSet::new();
        for f in &self.factors {
            if !seen.insert(f.name.as_str()) {
                return Err(err(format!("duplicate factor {:?}", f.name)));
            }
        }
        for (name, source, ratio) in self.spurious() {
            match self.factor(source).map(|f| &f.role) {
                Some(FactorRole::Causal { .. }) => {}
                _ => return Err(err(format!("spurious factor {name:?} must reference a causal factor, got {source:?}"))),
            }
            if ratio.den <= 0 {
                return Err(err(format!("ratio of {name:?} has a nonpositive denominator")));
            }
        }
        let mut order: Vec<&str> = self.render_order.iter().map(String::as_str).collect();
        let mut names: Vec<&str> = self.factors.iter().map(|f| f.name.as_str()).collect();
        order.sort_unstable();
        names.sort_unstable();
        if order != names {
            return Err(err("render order must list every factor exactly once".into()));
        }
        if let AnswerRule::Score { interaction: (a, b, _), lo, hi, .. } = &self.rule {
            for n in [a, b] {
                if !matches!(self.factor(n).map(|f| &f.role), Some(FactorRole::Causal { .. })) {
                    return Err(err(format!("interaction term references non-causal {n:?}")));
                }
            }
            if lo > hi {
                return Err(err("answer range is empty".into()));
            }
        }
        Ok(())
    }

    /// Causal score times ten, exact.
    pub fn score_tenths(&self, values: &IndexMap<String, i64>) -> i64 {
        let linear: i64 = self.causal().map(|(n, k)| k * values[n]).sum();
        match &self.rule {
            AnswerRule::Threshold { .. } => linear,
            AnswerRule::Score { intercept_tenths, interaction: (a, b, k), .. } => {
                linear + intercept_tenths + k * values[a.as_str()] * values[b.as_str()]
            }
        }
    }

    pub fn answer_for(&self, values: &IndexMap<String, i64>) -> String {
        let g10 = self.score_tenths(values);
        match &self.rule {
            AnswerRule::Threshold { threshold_tenths } => {
                if g10 >= *threshold_tenths { HIGH_RISK } else { LOW_RISK }.to_string()
            }
            AnswerRule::Score { lo, hi, .. } => {
                // round half up on tenths
                let rounded = (g10 + 5).div_euclid(10);
                rounded.clamp(*lo, *hi).to_string()
            }
        }
    }

    pub fn render_question(&self, values: &IndexMap<String, i64>, order: &[String]) -> String {
        let line = order
            .iter()
            .map(|n| format!("{n}: {}", values[n.as_str()]))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{}\n{}\n{}", self.intro, line, self.intro)
    }

    /// Draws one record from its own seeded stream.
    pub fn sample(&self, split: Split, seed: u64, index: u64, opts: GenOptions) -> StgExample {
        let mut rng = record_rng(seed, split, index);
        let mut values: IndexMap<String, i64> = IndexMap::new();
        for f in &self.factors {
            if !matches!(f.role, FactorRole::Spurious { .. }) {
                values.insert(f.name.clone(), rng.gen_range(VALUE_MIN..=VALUE_MAX));
            }
        }
        for (name, source, ratio) in self.spurious() {
            let v = if split.is_ood() {
                rng.gen_range(VALUE_MIN..=VALUE_MAX)
            } else {
                ratio.apply(values[source])
            };
            values.insert(name.to_string(), v);
        }
        let mut order = self.render_order.clone();
        if opts.shuffle_factors {
            order.shuffle(&mut rng);
        }
        let factors: IndexMap<String, i64> = order.iter().map(|n| (n.clone(), values[n.as_str()])).collect();
        let answer = self.answer_for(&values);
        let mut ex = StgExample {
            question: self.render_question(&values, &order),
            answer,
            split,
            factors,
            causal_map: None,
        };
        ex.causal_map = Some(self.ground_truth_map(&ex));
        ex
    }

    /// Effect = the answer phrase, causes = "Name: value" of each causal factor.
    pub fn ground_truth_map(&self, ex: &StgExample) -> CausalMap {
        let causes = self
            .causal()
            .map(|(n, _)| format!("{n}: {}", ex.factors[n]))
            .collect::<Vec<_>>();
        let mut map = CausalMap::new();
        map.insert(effect_phrase(&self.rule, &ex.answer), causes)
            .expect("generated phrases are nonempty");
        map
    }
}

pub const HIGH_RISK: &str = "High Risk";
pub const LOW_RISK: &str = "Low Risk";
pub const ANSWER_DELIMITER: &str = "Answer:";

/// Label answers are located verbatim; integer answers are anchored to the
/// delimiter so the digits do not collide with factor values in the question.
pub fn effect_phrase(rule: &AnswerRule, answer: &str) -> String {
    match rule {
        AnswerRule::Threshold { .. } => answer.to_string(),
        AnswerRule::Score { .. } => format!("{ANSWER_DELIMITER} {answer}"),
    }
}

/// Full training text: question, delimiter, answer.
pub fn full_text(ex: &StgExample) -> String {
    format!("{}\n{ANSWER_DELIMITER} {}", ex.question, ex.answer)
}

pub fn prompt_text(question: &str) -> String {
    format!("{question}\n{ANSWER_DELIMITER}")
}

fn record_rng(seed: u64, split: Split, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream_code() << 48) | index);
    rng
}

pub fn default_schema_e() -> StgSchema {
    let causal = |n: &str, k| Factor { name: n.into(), role: FactorRole::Causal { coef_tenths: k } };
    let spurious = |n: &str, s: &str, r| Factor {
        name: n.into(),
        role: FactorRole::Spurious { source: s.into(), ratio: r },
    };
    let irrelevant = |n: &str| Factor { name: n.into(), role: FactorRole::Irrelevant };
    StgSchema {
        name: "e".into(),
        intro: "Here is the statistical data for a person. Please predict the probability of cancer.".into(),
        factors: vec![
            causal("Smoking", 12),
            causal("Weight", 7),
            causal("Exercise", -10),
            spurious("Yellow fingers", "Smoking", Ratio::new(3, 2)),
            spurious("Clothing size", "Weight", Ratio::new(1, 1)),
            spurious("Hormones", "Exercise", Ratio::new(1, 2)),
            irrelevant("Room size"),
            irrelevant("Certain gene"),
        ],
        render_order: [
            "Yellow fingers",
            "Weight",
            "Room size",
            "Certain gene",
            "Clothing size",
            "Smoking",
            "Hormones",
            "Exercise",
        ]
        .map(String::from)
        .to_vec(),
        rule: AnswerRule::Threshold { threshold_tenths: 72 },
    }
}

/// Fourteen-factor health-score variant. The graph:
///
/// ```text
/// 10 g = 40 Age + 30 Blood pressure + 20 Cholesterol - 30 Exercise + 20 Stress
///        + 2 Age * Cholesterol - 100
/// answer = clamp(round(g), 0, 100)
///
/// Grey hair      = floor(1.5  * Age)
/// Headaches      = floor(1.0  * Blood pressure)
/// Waist size     = floor(0.5  * Cholesterol)
/// Gym visits     = floor(2.0  * Exercise)
/// Coffee cups    = floor(0.25 * Stress)
///
/// irrelevant: Shoe size, Birth month, House number, Pet count
/// ```
pub fn default_schema_h() -> StgSchema {
    let causal = |n: &str, k| Factor { name: n.into(), role: FactorRole::Causal { coef_tenths: k } };
    let spurious = |n: &str, s: &str, r| Factor {
        name: n.into(),
        role: FactorRole::Spurious { source: s.into(), ratio: r },
    };
    let irrelevant = |n: &str| Factor { name: n.into(), role: FactorRole::Irrelevant };
    StgSchema {
        name: "h".into(),
        intro: "Here is the health record of a person. Please predict the risk score from 0 to 100.".into(),
        factors: vec![
            causal("Age", 40),
            causal("Blood pressure", 30),
            causal("Cholesterol", 20),
            causal("Exercise", -30),
            causal("Stress", 20),
            spurious("Grey hair", "Age", Ratio::new(3, 2)),
            spurious("Headaches", "Blood pressure", Ratio::new(1, 1)),
            spurious("Waist size", "Cholesterol", Ratio::new(1, 2)),
            spurious("Gym visits", "Exercise", Ratio::new(2, 1)),
            spurious("Coffee cups", "Stress", Ratio::new(1, 4)),
            irrelevant("Shoe size"),
            irrelevant("Birth month"),
            irrelevant("House number"),
            irrelevant("Pet count"),
        ],
        render_order: [
            "Grey hair",
            "Age",
            "Shoe size",
            "Headaches",
            "Waist size",
            "Blood pressure",
            "Birth month",
            "Cholesterol",
            "Gym visits",
            "Exercise",
            "House number",
            "Coffee cups",
            "Stress",
            "Pet count",
        ]
        .map(String::from)
        .to_vec(),
        rule: AnswerRule::Score {
            intercept_tenths: -100,
            interaction: ("Age".into(), "Cholesterol".into(), 2),
            lo: 0,
            hi: 100,
        },
    }
}

pub fn generate(schema: &StgSchema, count: usize, split: Split, seed: u64, opts: GenOptions) -> Result<Vec<StgExample>, StgError> {
    if count == 0 {
        return Err(StgError::EmptyCount);
    }
    schema.validate()?;
    Ok((0..count as u64).map(|i| schema.sample(split, seed, i, opts)).collect())
}

pub fn generate_e(schema: &StgSchema, count: usize, split: Split, seed: u64) -> Result<Vec<StgExample>, StgError> {
    expect_rule(schema, matches!(schema.rule, AnswerRule::Threshold { .. }), "a threshold rule")?;
    generate(schema, count, split, seed, GenOptions::default())
}

pub fn generate_h(schema: &StgSchema, count: usize, split: Split, seed: u64) -> Result<Vec<StgExample>, StgError> {
    expect_rule(schema, matches!(schema.rule, AnswerRule::Score { .. }), "a score rule")?;
    if schema.factors.len() != 14 {
        return Err(StgError::Schema { schema: schema.name.clone(), msg: "expected 14 factors".into() });
    }
    generate(schema, count, split, seed, GenOptions::default())
}

fn expect_rule(schema: &StgSchema, ok: bool, what: &str) -> Result<(), StgError> {
    if ok {
        Ok(())
    } else {
        Err(StgError::Schema { schema: schema.name.clone(), msg: format!("expected {what}") })
    }
}

/// Fraction of `test` questions that also occur in `train`.
pub fn overlap_fraction(train: &[StgExample], test: &[StgExample]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let seen: std::collections::HashSet<&str> = train.iter().map(|e| e.question.as_str()).collect();
    test.iter().filter(|e| seen.contains(e.question.as_str())).count() as f64 / test.len() as f64
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[StgExample]) -> Result<(), StgError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|source| StgError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_string(records: &[StgExample]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<StgExample>, StgError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StgError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, records: &[StgExample]) -> Result<(), StgError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(f, records)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<StgExample>, StgError> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub iid_test: usize,
    pub ood_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    Label,
    Integer,
}

/// A benchmark variant selectable by name.
pub trait Variant: Send + Sync {
    fn name(&self) -> &'static str;
    fn schema(&self) -> StgSchema;
    fn answer_kind(&self) -> AnswerKind;
    /// Split sizes for a named size; `""` selects the variant default.
    fn sizes(&self, size: &str) -> Result<SplitSizes, StgError>;
}

pub struct VariantE;
pub struct VariantH;

impl Variant for VariantE {
    fn name(&self) -> &'static str {
        "e"
    }
    fn schema(&self) -> StgSchema {
        default_schema_e()
    }
    fn answer_kind(&self) -> AnswerKind {
        AnswerKind::Label
    }
    fn sizes(&self, size: &str) -> Result<SplitSizes, StgError> {
        let train = match size {
            "s" | "" => 400,
            "m" => 800,
            "l" => 1600,
            _ => return Err(StgError::Size { variant: "e".into(), size: size.into() }),
        };
        Ok(SplitSizes { train, iid_test: 400, ood_test: 400 })
    }
}

impl Variant for VariantH {
    fn name(&self) -> &'static str {
        "h"
    }
    fn schema(&self) -> StgSchema {
        default_schema_h()
    }
    fn answer_kind(&self) -> AnswerKind {
        AnswerKind::Integer
    }
    fn sizes(&self, size: &str) -> Result<SplitSizes, StgError> {
        match size {
            "default" | "h" | "" => Ok(SplitSizes { train: 3000, iid_test: 1000, ood_test: 1000 }),
            _ => Err(StgError::Size { variant: "h".into(), size: size.into() }),
        }
    }
}

pub fn variants() -> Registry<dyn Variant> {
    let mut r: Registry<dyn Variant> = Registry::new("variant");
    r.register("e", Box::new(VariantE));
    r.register("h", Box::new(VariantH));
    r
}

/// Picks the variant whose schema name matches, used when only a dataset is at hand.
pub fn variant_for_answer(answer: &str) -> &'static str {
    if answer == HIGH_RISK || answer == LOW_RISK {
        "e"
    } else {
        "h"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&str, i64)]) -> IndexMap<String, i64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn schemas_validate() {
        default_schema_e().validate().unwrap();
        default_schema_h().validate().unwrap();
        assert_eq!(default_schema_h().factors.len(), 14);
        assert_eq!(default_schema_e().factors.len(), 8);
    }

    #[test]
    fn worked_example() {
        let s = default_schema_e();
        let ratios: Vec<_> = s.spurious().map(|(n, _, r)| (n, r)).collect();
        assert_eq!(ratios[0].1.apply(2), 3);
        assert_eq!(ratios[1].1.apply(1), 1);
        assert_eq!(ratios[2].1.apply(5), 2);
        let v = vals(&[("Smoking", 2), ("Weight", 1), ("Exercise", 5)]);
        assert_eq!(s.score_tenths(&v), -19);
        assert_eq!(s.answer_for(&v), LOW_RISK);
        let v = vals(&[("Smoking", 10), ("Weight", 10), ("Exercise", 1)]);
        assert_eq!(s.score_tenths(&v), 180);
        assert_eq!(s.answer_for(&v), HIGH_RISK);
    }

    #[test]
    fn threshold_is_inclusive() {
        let s = default_schema_e();
        // 12*6 + 7*0 - 10*0 = 72 is unreachable with values >= 1; use 12*6+7*10-10*7 = 72
        let v = vals(&[("Smoking", 6), ("Weight", 10), ("Exercise", 7)]);
        assert_eq!(s.score_tenths(&v), 72);
        assert_eq!(s.answer_for(&v), HIGH_RISK);
    }

    #[test]
    fn rendered_question_matches_template() {
        let s = default_schema_e();
        let v = vals(&[
            ("Yellow fingers", 3),
            ("Weight", 1),
            ("Room size", 4),
            ("Certain gene", 4),
            ("Clothing size", 1),
            ("Smoking", 2),
            ("Hormones", 2),
            ("Exercise", 5),
        ]);
        let q = s.render_question(&v, &s.render_order);
        assert_eq!(
            q,
            "Here is the statistical data for a person. Please predict the probability of cancer.\n\
             Yellow fingers: 3, Weight: 1, Room size: 4, Certain gene: 4, Clothing size: 1, Smoking: 2, Hormones: 2, Exercise: 5\n\
             Here is the statistical data for a person. Please predict the probability of cancer."
        );
    }

    #[test]
    fn ground_truth_map_for_example() {
        let s = default_schema_e();
        let ex = StgExample {
            question: String::new(),
            answer: LOW_RISK.into(),
            split: Split::IidTrain,
            factors: vals(&[("Smoking", 2), ("Weight", 1), ("Exercise", 5), ("Yellow fingers", 3)]),
            causal_map: None,
        };
        let m = s.ground_truth_map(&ex);
        assert_eq!(m.to_json_string(), r#"{"Low Risk":["Smoking: 2","Weight: 1","Exercise: 5"]}"#);
    }

    #[test]
    fn h_minimum_clamps_to_zero() {
        let s = default_schema_h();
        let v: IndexMap<String, i64> = s.causal().map(|(n, _)| (n.to_string(), 1)).collect();
        assert_eq!(s.score_tenths(&v), -18);
        assert_eq!(s.answer_for(&v), "0");
        let mut hi = v.clone();
        for n in ["Age", "Blood pressure", "Cholesterol", "Stress"] {
            hi[n] = 10;
        }
        assert_eq!(s.answer_for(&hi), "100");
        assert_eq!(effect_phrase(&s.rule, "57"), "Answer: 57");
    }

    #[test]
    fn shuffled_order_keeps_values() {
        let s = default_schema_e();
        let plain = s.sample(Split::IidTrain, 3, 9, GenOptions::default());
        let shuffled = s.sample(Split::IidTrain, 3, 9, GenOptions { shuffle_factors: true });
        for (k, v) in &plain.factors {
            assert_eq!(shuffled.factors[k.as_str()], *v);
        }
        assert_eq!(plain.answer, shuffled.answer);
    }

    #[test]
    fn count_zero_rejected() {
        assert!(matches!(generate_e(&default_schema_e(), 0, Split::IidTrain, 1), Err(StgError::EmptyCount)));
        assert!(generate_h(&default_schema_e(), 1, Split::IidTrain, 1).is_err());
    }

    #[test]
    fn variant_registry() {
        let r = variants();
        assert_eq!(r.get("e").unwrap().sizes("m").unwrap().train, 800);
        assert!(r.get("e").unwrap().sizes("x").is_err());
        assert_eq!(r.get("h").unwrap().sizes("default").unwrap().iid_test, 1000);
        assert_eq!(r.get("h").unwrap().sizes("").unwrap().train, 3000);
        assert_eq!(r.get("e").unwrap().sizes("").unwrap().train, 400);
        assert!(r.get("q").is_err());
    }

    #[test]
    fn split_parse() {
        assert_eq!("ood".parse::<Split>().unwrap(), Split::OodTest);
        assert_eq!(serde_json::to_string(&Split::IidTest).unwrap(), "\"iid_test\"");
    }
}
