//! Turns benchmark records into model-ready token sequences with supervision.

use serde::{Deserialize, Serialize};

use crate::stg::{full_text, prompt_text, StgExample};
use crate::supervision::{build_adjacency, AdjacencyReport, TokenAdjacency};
use crate::tokenizer::{Encoding, TokenizerError, Vocab};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    /// Next-token loss only where the target is an answer token or the final eos.
    #[default]
    AnswerOnly,
    FullSequence,
}

impl std::str::FromStr for LossMask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "answer_only" | "answer" => Ok(LossMask::AnswerOnly),
            "full_sequence" | "full" => Ok(LossMask::FullSequence),
            other => Err(format!("unknown loss mask {other:?}")),
        }
    }
}

/// One training sequence. The full sequence is `bos, question, delimiter,
/// answer, eos`; the model reads all but the last token.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub input_ids: Vec<u32>,
    /// Next-token target per input position, `None` where unsupervised.
    pub targets: Vec<Option<usize>>,
    /// Shifted supervision over the input positions.
    pub adjacency: TokenAdjacency,
    pub report: AdjacencyReport,
    /// Length of `bos, question, delimiter`, i.e. the generation prompt.
    pub prompt_len: usize,
    pub encoding: Encoding,
}

impl PreparedExample {
    pub fn prompt_ids(&self) -> &[u32] {
        &self.input_ids[..self.prompt_len]
    }

    /// Input rows whose next token is part of the answer.
    pub fn answer_rows(&self) -> std::ops::Range<usize> {
        self.prompt_len - 1..self.input_ids.len()
    }
}

/// Vocabulary over the full training texts.
pub fn build_vocab(examples: &[StgExample]) -> Result<Vocab, TokenizerError> {
    let corpus: Vec<String> = examples.iter().map(full_text).collect();
    Vocab::build(&corpus, 1)
}

pub fn encode_prompt(vocab: &Vocab, question: &str) -> Encoding {
    vocab.encode(&prompt_text(question)).with_leading(Vocab::BOS_ID, "<bos>")
}

pub fn prepare(ex: &StgExample, vocab: &Vocab, mask: LossMask) -> PreparedExample {
    let mut full = vocab.encode(&full_text(ex)).with_leading(Vocab::BOS_ID, "<bos>");
    full.push_special(Vocab::EOS_ID, "<eos>");
    let prompt_len = encode_prompt(vocab, &ex.question).len();
    let n = full.len();

    let (adjacency, report) = match &ex.causal_map {
        Some(map) => {
            let (adj, report) = build_adjacency(map, vocab, &full);
            (adj.truncated(n - 1), report)
        }
        None => (TokenAdjacency::empty(n - 1), AdjacencyReport::default()),
    };
    let targets = (0..n - 1)
        .map(|i| {
            let supervised = match mask {
                LossMask::AnswerOnly => i + 1 >= prompt_len,
                LossMask::FullSequence => true,
            };
            supervised.then_some(full.ids[i + 1] as usize)
        })
        .collect();
    PreparedExample {
        input_ids: full.ids[..n - 1].to_vec(),
        targets,
        adjacency,
        report,
        prompt_len,
        encoding: full,
    }
}

pub fn prepare_all(examples: &[StgExample], vocab: &Vocab, mask: LossMask) -> Vec<PreparedExample> {
    examples.iter().map(|e| prepare(e, vocab, mask)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stg::{default_schema_e, generate_e, Split};

    #[test]
    fn worked_example_marks_causal_columns_in_answer_rows() {
        let schema = default_schema_e();
        let mut ex = generate_e(&schema, 1, Split::IidTrain, 1).unwrap().remove(0);
        let vals = [
            ("Yellow fingers", 3),
            ("Weight", 1),
            ("Room size", 4),
            ("Certain gene", 4),
            ("Clothing size", 1),
            ("Smoking", 2),
            ("Hormones", 2),
            ("Exercise", 5),
        ];
        ex.factors = vals.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        ex.question = schema.render_question(&ex.factors, &schema.render_order);
        ex.answer = schema.answer_for(&ex.factors);
        assert_eq!(ex.answer, "Low Risk");
        ex.causal_map = Some(schema.ground_truth_map(&ex));

        let vocab = build_vocab(std::slice::from_ref(&ex)).unwrap();
        let p = prepare(&ex, &vocab, LossMask::AnswerOnly);
        assert!(p.report.skipped.is_empty());
        let n = p.input_ids.len();
        // inputs end with "Answer : Low Risk"; rows n-3 and n-2 predict "Low" and "Risk"
        assert_eq!(vocab.token(p.input_ids[n - 1]), Some("Risk"));
        assert_eq!(p.adjacency.supervised_rows(), &[n - 3, n - 2]);
        assert_eq!(p.answer_rows(), n - 3..n);

        let words: Vec<&str> = vocab.decode(&p.input_ids);
        let marked: Vec<String> = (0..n)
            .filter(|&j| p.adjacency.get(n - 3, j))
            .map(|j| words[j].to_string())
            .collect();
        assert_eq!(marked, ["Weight", ":", "1", "Smoking", ":", "2", "Exercise", ":", "5"]);
        assert_eq!(p.adjacency.row(n - 3), p.adjacency.row(n - 2));

        let targets: Vec<_> = p.targets.iter().flatten().map(|&t| vocab.token(t as u32).unwrap()).collect();
        assert_eq!(targets, ["Low", "Risk", "<eos>"]);
        let full = prepare(&ex, &vocab, LossMask::FullSequence);
        assert!(full.targets.iter().all(Option::is_some));
    }
}
