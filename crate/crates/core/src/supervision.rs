//! Word-level causal maps, their token-level adjacency matrices, and the
//! re-attention hinge loss computed from an averaged attention map.
//!
//! A [`CausalMap`] says "effect phrase `e` was produced from cause phrases
//! `c1, c2, ...`". [`build_adjacency`] marks, for every token of every
//! occurrence of `e`, the token positions of every occurrence of each `c`, then
//! shifts the matrix up by one row so that row `i` describes what the model
//! should look at while predicting token `i + 1`.
//!
//! For each supervised row the mean attention on causal columns (`C_i`) is
//! compared with the mean on the remaining prefix columns (`N_i`); the loss is
//! `sum_i max(0, alpha - C_i / N_i)`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Scalar, Var};
use crate::tokenizer::{Encoding, Vocab};

/// Floor applied to `N_i` before dividing. Rows whose non-causal set is empty
/// are excluded beforehand, so on valid rows this never binds.
pub const NONCAUSAL_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum SupervisionError {
    #[error("causal map: {0}")]
    InvalidMap(String),
    #[error("causal map JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("adjacency has size {adjacency} but the attention map has size {map}")]
    SizeMismatch { adjacency: usize, map: usize },
    #[error("alpha must be positive, got {0}")]
    Alpha(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Effect phrase to cause phrases, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, Vec<String>>", into = "IndexMap<String, Vec<String>>")]
pub struct CausalMap {
    entries: IndexMap<String, Vec<String>>,
}

impl TryFrom<IndexMap<String, Vec<String>>> for CausalMap {
    type Error = SupervisionError;

    fn try_from(entries: IndexMap<String, Vec<String>>) -> Result<Self, Self::Error> {
        let mut map = CausalMap::default();
        for (effect, causes) in entries {
            map.insert(effect, causes)?;
        }
        Ok(map)
    }
}

impl From<CausalMap> for IndexMap<String, Vec<String>> {
    fn from(m: CausalMap) -> Self {
        m.entries
    }
}

impl CausalMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or replaces) an entry. Every phrase must be non-blank.
    pub fn insert(
        &mut self,
        effect: impl Into<String>,
        causes: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<(), SupervisionError> {
        let effect = effect.into();
        if effect.trim().is_empty() {
            return Err(SupervisionError::InvalidMap("empty effect phrase".into()));
        }
        let causes: Vec<String> = causes.into_iter().map(Into::into).collect();
        if let Some(bad) = causes.iter().find(|c| c.trim().is_empty()) {
            return Err(SupervisionError::InvalidMap(format!("empty cause phrase {bad:?} for {effect:?}")));
        }
        self.entries.insert(effect, causes);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn causes(&self, effect: &str) -> Option<&[String]> {
        self.entries.get(effect).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Strict validation of an arbitrary JSON value: a flat object whose
    /// values are arrays of non-empty strings. Errors quote the offending
    /// fragment.
    pub fn from_json_value(value: &serde_json::Value) -> Result<Self, SupervisionError> {
        let obj = value
            .as_object()
            .ok_or_else(|| SupervisionError::InvalidMap(format!("expected an object, got {}", fragment(value))))?;
        let mut map = CausalMap::new();
        for (effect, causes) in obj {
            let arr = causes.as_array().ok_or_else(|| {
                SupervisionError::InvalidMap(format!("value of {effect:?} is not an array: {}", fragment(causes)))
            })?;
            let mut list = Vec::with_capacity(arr.len());
            for c in arr {
                let s = c.as_str().ok_or_else(|| {
                    SupervisionError::InvalidMap(format!("cause of {effect:?} is not a string: {}", fragment(c)))
                })?;
                list.push(s.to_string());
            }
            map.insert(effect.clone(), list)?;
        }
        Ok(map)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SupervisionError> {
        Self::from_json_value(&serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.entries).expect("string map serializes")
    }
}

fn fragment(v: &serde_json::Value) -> String {
    let s = v.to_string();
    if s.chars().count() > 80 {
        format!("{}...", s.chars().take(80).collect::<String>())
    } else {
        s
    }
}

/// Shifted token-level supervision matrix for one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAdjacency {
    size: usize,
    bits: Vec<bool>,
    supervised_rows: Vec<usize>,
    /// Columns that take part in neither `C_i` nor `N_i` (bos/pad positions).
    ignored: Vec<bool>,
}

impl TokenAdjacency {
    pub fn empty(size: usize) -> Self {
        Self { size, bits: vec![false; size * size], supervised_rows: Vec::new(), ignored: vec![false; size] }
    }

    /// Applies the upward shift to a raw (pre-shift) matrix: row `i` takes row
    /// `i + 1`, the last row is cleared and any entry above the diagonal is
    /// dropped.
    pub fn from_unshifted(size: usize, raw: &[bool]) -> Self {
        assert_eq!(raw.len(), size * size);
        let mut bits = vec![false; size * size];
        for i in 0..size.saturating_sub(1) {
            for j in 0..=i {
                bits[i * size + j] = raw[(i + 1) * size + j];
            }
        }
        let mut adj = Self { size, bits, supervised_rows: Vec::new(), ignored: vec![false; size] };
        adj.refresh_rows();
        adj
    }

    fn refresh_rows(&mut self) {
        let n = self.size;
        self.supervised_rows = (0..n).filter(|&i| self.bits[i * n..(i + 1) * n].iter().any(|&b| b)).collect();
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.size..(i + 1) * self.size]
    }

    pub fn supervised_rows(&self) -> &[usize] {
        &self.supervised_rows
    }

    pub fn is_ignored(&self, col: usize) -> bool {
        self.ignored[col]
    }

    pub fn set_ignored(&mut self, col: usize, ignored: bool) {
        self.ignored[col] = ignored;
    }

    /// Zero-extends to `len` (batch padding); the new rows are never
    /// supervised and the new columns are ignored.
    pub fn padded(&self, len: usize) -> Self {
        assert!(len >= self.size);
        let mut out = Self::empty(len);
        for i in 0..self.size {
            out.bits[i * len..i * len + self.size].copy_from_slice(self.row(i));
        }
        out.ignored[..self.size].copy_from_slice(&self.ignored);
        out.ignored[self.size..].iter_mut().for_each(|b| *b = true);
        out.supervised_rows = self.supervised_rows.clone();
        out
    }

    /// Leading `len x len` block, e.g. to drop the row that predicts past the
    /// final token.
    pub fn truncated(&self, len: usize) -> Self {
        assert!(len <= self.size);
        let mut out = Self::empty(len);
        for i in 0..len {
            out.bits[i * len..(i + 1) * len].copy_from_slice(&self.row(i)[..len]);
        }
        out.ignored.copy_from_slice(&self.ignored[..len]);
        out.refresh_rows();
        out
    }

    /// Causal and non-causal flat indices for row `i` over prefix `j <= i`,
    /// skipping ignored columns. `None` when either set is empty.
    pub fn row_partition(&self, i: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let n = self.size;
        let (mut causal, mut rest) = (Vec::new(), Vec::new());
        for j in 0..=i {
            if self.ignored[j] {
                continue;
            }
            if self.bits[i * n + j] {
                causal.push(i * n + j);
            } else {
                rest.push(i * n + j);
            }
        }
        (!causal.is_empty() && !rest.is_empty()).then_some((causal, rest))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingSide {
    Effect,
    Cause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub effect: String,
    pub cause: String,
    pub missing: MissingSide,
}

/// Pairs of a causal map that could not be placed in the token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyReport {
    pub pairs_total: usize,
    pub skipped: Vec<SkippedPair>,
}

/// Token-level supervision for `encoding`, which must be the tokenization of
/// the text the map was written against. Bos and pad positions are marked as
/// ignored columns.
pub fn build_adjacency(map: &CausalMap, vocab: &Vocab, encoding: &Encoding) -> (TokenAdjacency, AdjacencyReport) {
    let n = encoding.len();
    let mut raw = vec![false; n * n];
    let mut report = AdjacencyReport::default();
    for (effect, causes) in map.entries() {
        let effect_hits = vocab.locate_phrase(encoding, effect);
        for cause in causes {
            report.pairs_total += 1;
            if effect_hits.is_empty() {
                report.skipped.push(SkippedPair { effect: effect.into(), cause: cause.clone(), missing: MissingSide::Effect });
                continue;
            }
            let cause_hits = vocab.locate_phrase(encoding, cause);
            if cause_hits.is_empty() {
                report.skipped.push(SkippedPair { effect: effect.into(), cause: cause.clone(), missing: MissingSide::Cause });
                continue;
            }
            for e in &effect_hits {
                for row in e.positions() {
                    for c in &cause_hits {
                        for col in c.positions() {
                            raw[row * n + col] = true;
                        }
                    }
                }
            }
        }
    }
    let mut adj = TokenAdjacency::from_unshifted(n, &raw);
    for (j, &id) in encoding.ids.iter().enumerate() {
        if id == Vocab::BOS_ID || id == Vocab::PAD_ID {
            adj.ignored[j] = true;
        }
    }
    (adj, report)
}

/// `C_i` and `N_i` of one supervised row, as nodes of the training graph.
#[derive(Debug, Clone, Copy)]
pub struct RatioTerm {
    pub row: usize,
    pub causal: Var,
    pub noncausal: Var,
}

#[derive(Debug, Clone, Default)]
pub struct RatioTerms {
    pub terms: Vec<RatioTerm>,
    /// Supervised rows dropped because every prefix token is causal (or
    /// every causal token is an ignored column).
    pub degenerate_rows: Vec<usize>,
}

fn check_square<T: Scalar>(graph: &Graph<T>, adj: &TokenAdjacency, map: Var) -> Result<(), SupervisionError> {
    let shape = graph.shape(map);
    if shape != [adj.size, adj.size] {
        return Err(SupervisionError::SizeMismatch { adjacency: adj.size, map: shape.first().copied().unwrap_or(0) });
    }
    Ok(())
}

/// Per-row mean attention on causal and non-causal prefix columns of the
/// averaged map, kept inside the graph so the loss reaches the attention.
pub fn attn_ratio_terms<T: Scalar>(
    graph: &mut Graph<T>,
    adj: &TokenAdjacency,
    average_map: Var,
) -> Result<RatioTerms, SupervisionError> {
    check_square(graph, adj, average_map)?;
    let mut out = RatioTerms::default();
    for &row in &adj.supervised_rows {
        match adj.row_partition(row) {
            Some((causal, rest)) => {
                let c = graph.mean_over_selection(average_map, &causal)?;
                let n = graph.mean_over_selection(average_map, &rest)?;
                out.terms.push(RatioTerm { row, causal: c, noncausal: n });
            }
            None => out.degenerate_rows.push(row),
        }
    }
    Ok(out)
}

/// `sum_i max(0, alpha - C_i / max(N_i, floor))` over the given rows. With no
/// rows the loss is a zero constant.
pub fn re_attention_loss<T: Scalar>(graph: &mut Graph<T>, terms: &RatioTerms, alpha: f64) -> Result<Var, SupervisionError> {
    if !(alpha > 0.0) {
        return Err(SupervisionError::Alpha(alpha));
    }
    if terms.terms.is_empty() {
        return Ok(graph.constant(vec![1], vec![T::zero()])?);
    }
    let mut hinges = Vec::with_capacity(terms.terms.len());
    for t in &terms.terms {
        let floored = graph.clamp_min(t.noncausal, T::from_f64(NONCAUSAL_FLOOR));
        let ratio = graph.divide(t.causal, floored)?;
        let neg = graph.scale(ratio, -T::one());
        let gap = graph.add_scalar(neg, T::from_f64(alpha));
        hinges.push(graph.maximum_with_zero(gap));
    }
    let stacked = graph.concat_last_dim(&hinges)?;
    Ok(graph.sum(stacked))
}

/// Plain-number view of one supervised row, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowRatio {
    pub row: usize,
    pub causal: f64,
    pub noncausal: f64,
}

impl RowRatio {
    pub fn ratio(&self) -> f64 {
        self.causal / self.noncausal.max(NONCAUSAL_FLOOR)
    }
}

/// Same quantities as [`attn_ratio_terms`] on a row-major `n x n` map held
/// outside any graph.
pub fn row_ratios(adj: &TokenAdjacency, map: &[f64]) -> Result<Vec<RowRatio>, SupervisionError> {
    if map.len() != adj.size * adj.size {
        return Err(SupervisionError::SizeMismatch { adjacency: adj.size, map: (map.len() as f64).sqrt() as usize });
    }
    let mean = |idx: &[usize]| idx.iter().map(|&k| map[k]).sum::<f64>() / idx.len() as f64;
    Ok(adj
        .supervised_rows
        .iter()
        .filter_map(|&row| {
            adj.row_partition(row).map(|(c, r)| RowRatio { row, causal: mean(&c), noncausal: mean(&r) })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Tensor};

    fn map_of(pairs: &[(&str, &[&str])]) -> CausalMap {
        let mut m = CausalMap::new();
        for (e, cs) in pairs {
            m.insert(*e, cs.iter().copied()).unwrap();
        }
        m
    }

    #[test]
    fn json_shape_round_trip() {
        let text = r#"{"103.0":["659 feet","and","762 feet","Answer"],"until":["How much farther"]}"#;
        let m = CausalMap::from_json_str(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.causes("103.0").unwrap().len(), 4);
        assert_eq!(m.to_json_string(), text);
        let via_serde: CausalMap = serde_json::from_str(text).unwrap();
        assert_eq!(via_serde, m);
    }

    #[test]
    fn json_validation_quotes_the_fragment() {
        let err = CausalMap::from_json_str(r#"{"A": "B"}"#).unwrap_err().to_string();
        assert!(err.contains("\"B\""), "{err}");
        let err = CausalMap::from_json_str(r#"{"A": [1]}"#).unwrap_err().to_string();
        assert!(err.contains('1'), "{err}");
        assert!(CausalMap::from_json_str(r#"["A"]"#).is_err());
        assert!(CausalMap::from_json_str(r#"{"A": [""]}"#).is_err());
        assert!(CausalMap::from_json_str(r#"{" ": ["x"]}"#).is_err());
    }

    #[test]
    fn empty_map_gives_empty_adjacency() {
        let v = Vocab::build(&["A B"], 1).unwrap();
        let e = v.encode("A B");
        let (adj, report) = build_adjacency(&CausalMap::new(), &v, &e);
        assert!(adj.supervised_rows().is_empty());
        assert_eq!(report.pairs_total, 0);
    }

    #[test]
    fn two_token_shift_trace() {
        let v = Vocab::build(&["A B"], 1).unwrap();
        let e = v.encode("A B");
        let (adj, report) = build_adjacency(&map_of(&[("B", &["A"])]), &v, &e);
        assert!(report.skipped.is_empty());
        assert!(adj.get(0, 0));
        assert!(!adj.get(1, 0) && !adj.get(1, 1) && !adj.get(0, 1));
        assert_eq!(adj.supervised_rows(), &[0]);
    }

    #[test]
    fn missing_phrases_are_reported_not_fatal() {
        let v = Vocab::build(&["A B C"], 1).unwrap();
        let e = v.encode("A B C");
        let m = map_of(&[("C", &["A", "Z"]), ("Q", &["A"])]);
        let (adj, report) = build_adjacency(&m, &v, &e);
        assert_eq!(report.pairs_total, 3);
        assert_eq!(report.skipped.len(), 2);
        assert_eq!(report.skipped[0].missing, MissingSide::Cause);
        assert_eq!(report.skipped[1].missing, MissingSide::Effect);
        assert_eq!(adj.supervised_rows(), &[1]);
    }

    #[test]
    fn ratio_terms_arithmetic() {
        // uniform row over 4 prefix slots: C = N = 1/4
        let mut raw = vec![false; 16];
        raw[3 * 4] = true; // pre-shift row 3 col 0 -> post-shift row 2
        let adj = TokenAdjacency::from_unshifted(4, &raw);
        let mut map = vec![0.0; 16];
        for (i, row) in map.chunks_mut(4).enumerate() {
            row[..=i].iter_mut().for_each(|v| *v = 1.0 / (i + 1) as f64);
        }
        let r = row_ratios(&adj, &map).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].causal - 1.0 / 3.0).abs() < 1e-15);
        assert!((r[0].ratio() - 1.0).abs() < 1e-12);

        let mut raw = vec![false; 25];
        raw[4 * 5] = true; // post-shift row 3, causal col 0
        let adj = TokenAdjacency::from_unshifted(5, &raw);
        let mut map = vec![0.0; 25];
        map[15..19].copy_from_slice(&[0.7, 0.1, 0.1, 0.1]);
        let r = row_ratios(&adj, &map).unwrap();
        assert!((r[0].causal - 0.7).abs() < 1e-15);
        assert!((r[0].noncausal - 0.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rows_are_excluded() {
        let mut raw = vec![false; 9];
        raw[3] = true; // pre-shift row 1 col 0 -> row 0, whose only prefix slot is causal
        let adj = TokenAdjacency::from_unshifted(3, &raw);
        let mut g = Graph::<f64>::new();
        let m = g.leaf(&Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.3, 0.3, 0.4]).unwrap());
        let terms = attn_ratio_terms(&mut g, &adj, m).unwrap();
        assert!(terms.terms.is_empty());
        assert_eq!(terms.degenerate_rows, vec![0]);
        let l = re_attention_loss(&mut g, &terms, 0.3).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
    }

    fn single_row_setup(c: f64, n: f64) -> (TokenAdjacency, Tensor<f64>) {
        // row 2: col 0 causal, cols 1 and 2 non-causal
        let mut raw = vec![false; 16];
        raw[3 * 4] = true;
        let adj = TokenAdjacency::from_unshifted(4, &raw);
        let mut data = vec![0.0; 16];
        data[8] = c;
        data[9] = n;
        data[10] = n;
        data[11] = 0.0;
        (adj, Tensor::new(vec![4, 4], data).unwrap())
    }

    #[test]
    fn hinge_values_and_dead_zone() {
        let (adj, map) = single_row_setup(0.1, 0.2);
        let mut g = Graph::new();
        let m = g.leaf(&map.clone().with_grad());
        let terms = attn_ratio_terms(&mut g, &adj, m).unwrap();
        let l = re_attention_loss(&mut g, &terms, 0.3).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(m).unwrap().iter().all(|&v| v == 0.0));

        let (adj, map) = single_row_setup(0.02, 0.2);
        let mut g = Graph::new();
        let m = g.leaf(&map);
        let terms = attn_ratio_terms(&mut g, &adj, m).unwrap();
        let l = re_attention_loss(&mut g, &terms, 0.3).unwrap();
        assert!((g.scalar_value(l) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        let (adj, map) = single_row_setup(0.02, 0.2);
        let report = gradcheck::check(&[map], 1e-7, |g, v| {
            let terms = attn_ratio_terms(g, &adj, v[0]).map_err(|_| AutodiffError::EmptySelection)?;
            re_attention_loss(g, &terms, 0.3).map_err(|_| AutodiffError::EmptySelection)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn alpha_must_be_positive() {
        let mut g = Graph::<f64>::new();
        assert!(matches!(re_attention_loss(&mut g, &RatioTerms::default(), 0.0), Err(SupervisionError::Alpha(_))));
    }

    #[test]
    fn padding_keeps_rows_and_ignores_new_columns() {
        let mut raw = vec![false; 9];
        raw[2 * 3] = true;
        let adj = TokenAdjacency::from_unshifted(3, &raw);
        let p = adj.padded(5);
        assert_eq!(p.supervised_rows(), adj.supervised_rows());
        assert!(p.get(1, 0));
        assert!(p.is_ignored(3) && p.is_ignored(4));
        assert!(!p.is_ignored(0));
    }
}
