//! Word-level tokenizer that splits every number into single-character
//! tokens, so a single source word can cover several token positions.
//!
//! Text is cut into *words*: alphabetic runs, number runs (digits with
//! embedded `.` between digits) and single punctuation characters. A number
//! word yields one token per character; every other word is one token. Each
//! word is recorded as a [`TokenSpan`] over the token sequence, so spans
//! partition the sequence.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense token-id mapping. Ids `0..4` are the specials, in the order
/// pad, bos, eos, unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps every token seen at least `min_count` times, ordered by
    /// (frequency desc, token asc), after the special header.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for word in split_words(doc.as_ref()) {
                for piece in word.pieces() {
                    *counts.entry(piece).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(TokenizerError::Format("missing special-token header".into()));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        for word in split_words(text) {
            let start = ids.len();
            ids.extend(word.pieces().map(|p| self.id_or_unk(&p)));
            spans.push(TokenSpan { word: word.text, start, end: ids.len(), space_before: word.space_before });
        }
        Encoding { ids, spans }
    }

    /// Rebuilds normalized text from ids, inserting a single space where the
    /// source had whitespace.
    pub fn detokenize(&self, encoding: &Encoding) -> String {
        let mut out = String::new();
        for (i, span) in encoding.spans.iter().enumerate() {
            if i > 0 && span.space_before {
                out.push(' ');
            }
            for &id in &encoding.ids[span.start..span.end] {
                out.push_str(self.token(id).unwrap_or(UNK));
            }
        }
        out
    }

    /// Space-separated token strings, for logs and generated continuations.
    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&id| self.token(id).unwrap_or(UNK)).collect()
    }

    /// Every non-overlapping, word-aligned occurrence of `phrase`,
    /// leftmost first. A phrase with an unknown token never matches.
    pub fn locate_phrase(&self, encoding: &Encoding, phrase: &str) -> Vec<TokenSpan> {
        let needle = self.encode(&normalize(phrase));
        if needle.ids.is_empty() || needle.ids.contains(&Self::UNK_ID) {
            return Vec::new();
        }
        let n = encoding.ids.len();
        let mut starts = vec![false; n + 1];
        let mut ends = vec![false; n + 1];
        for s in &encoding.spans {
            starts[s.start] = true;
            ends[s.end] = true;
        }
        let k = needle.ids.len();
        let mut found = Vec::new();
        let mut i = 0;
        while i + k <= n {
            if starts[i] && ends[i + k] && encoding.ids[i..i + k] == needle.ids[..] {
                found.push(TokenSpan { word: phrase.to_string(), start: i, end: i + k, space_before: false });
                i += k;
            } else {
                i += 1;
            }
        }
        found
    }
}

/// Token ids plus the word spans that cover them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub spans: Vec<TokenSpan>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Prepends a single special token, shifting every span right by one.
    pub fn with_leading(mut self, id: u32, label: &str) -> Self {
        for s in &mut self.spans {
            s.start += 1;
            s.end += 1;
        }
        self.ids.insert(0, id);
        self.spans.insert(0, TokenSpan { word: label.into(), start: 0, end: 1, space_before: false });
        self
    }

    /// Appends `other`, offsetting its spans.
    pub fn extend(&mut self, other: Encoding) {
        let offset = self.ids.len();
        self.ids.extend(other.ids);
        self.spans.extend(other.spans.into_iter().map(|mut s| {
            s.start += offset;
            s.end += offset;
            s
        }));
    }

    pub fn push_special(&mut self, id: u32, label: &str) {
        let start = self.ids.len();
        self.ids.push(id);
        self.spans.push(TokenSpan { word: label.into(), start, end: start + 1, space_before: false });
    }
}

/// Half-open token range `[start, end)` produced by one source word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub word: String,
    pub start: usize,
    pub end: usize,
    /// Whether whitespace preceded the word in the source text.
    pub space_before: bool,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Word {
    text: String,
    space_before: bool,
    numeric: bool,
}

impl Word {
    fn pieces(&self) -> Box<dyn Iterator<Item = String> + '_> {
        if self.numeric {
            Box::new(self.text.chars().map(String::from))
        } else {
            Box::new(std::iter::once(self.text.clone()))
        }
    }
}

fn split_words(text: &str) -> Vec<Word> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut space_before = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            space_before = true;
            i += 1;
            continue;
        }
        let start = i;
        let numeric = c.is_ascii_digit();
        if numeric {
            i += 1;
            loop {
                if i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                } else if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    i += 2;
                } else {
                    break;
                }
            }
        } else if c.is_alphabetic() {
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
        } else {
            i += 1;
        }
        words.push(Word { text: chars[start..i].iter().collect(), space_before, numeric });
        space_before = false;
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &Vocab, e: &Encoding) -> Vec<String> {
        v.decode(&e.ids).into_iter().map(String::from).collect()
    }

    #[test]
    fn build_vocab_min_count() {
        let v = Vocab::build(&["a a b"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(4), Some("a"));
        assert_eq!(v.token(5), Some("b"));

        let v = Vocab::build(&["a a b"], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), None);
        assert_eq!(v.encode("b").ids, vec![Vocab::UNK_ID]);
    }

    #[test]
    fn build_vocab_rejects_empty_corpus() {
        let empty: [&str; 0] = [];
        assert!(matches!(Vocab::build(&empty, 1), Err(TokenizerError::EmptyCorpus)));
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = Vocab::build(&["z y y x x"], 1).unwrap();
        assert_eq!(v.decode(&[4, 5, 6]), vec!["x", "y", "z"]);
    }

    #[test]
    fn key_value_pair_tokenizes_to_three_tokens() {
        let v = Vocab::build(&["Weight: 1"], 1).unwrap();
        let e = v.encode("Weight: 1");
        assert_eq!(strings(&v, &e), vec!["Weight", ":", "1"]);
        assert_eq!(e.spans[2].word, "1");
        assert_eq!(e.spans[2].len(), 1);
    }

    #[test]
    fn decimal_number_shares_one_span() {
        let v = Vocab::build(&["Answer: 103.0"], 1).unwrap();
        let e = v.encode("Answer: 103.0");
        assert_eq!(strings(&v, &e), vec!["Answer", ":", "1", "0", "3", ".", "0"]);
        assert_eq!(e.spans.len(), 3);
        assert_eq!(e.spans[2], TokenSpan { word: "103.0".into(), start: 2, end: 7, space_before: true });
    }

    #[test]
    fn trailing_period_is_not_part_of_number() {
        let v = Vocab::build(&["has 2."], 1).unwrap();
        let e = v.encode("has 2.");
        assert_eq!(strings(&v, &e), vec!["has", "2", "."]);
        assert_eq!(e.spans.len(), 3);
    }

    #[test]
    fn detokenize_round_trips_normalized_text() {
        let text = "  Here is   data.\nSmoking: 2, Weight: 10  ";
        let v = Vocab::build(&[text], 1).unwrap();
        let e = v.encode(text);
        assert_eq!(v.detokenize(&e), normalize(text));
    }

    #[test]
    fn vocab_text_round_trip_and_header_check() {
        let v = Vocab::build(&["b a a , 7"], 1).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.fingerprint(), back.fingerprint());
        assert!(Vocab::from_text("a\nb\n").is_err());
    }

    #[test]
    fn locate_phrase_examples() {
        let q = "Smoking: 2, Clothing size: 1, Smoking: 12";
        let v = Vocab::build(&[q], 1).unwrap();
        let e = v.encode(q);
        let hits = v.locate_phrase(&e, "Smoking: 2");
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].start, hits[0].end), (0, 3));

        let hits = v.locate_phrase(&e, "Clothing size");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].len(), 2);
        assert_eq!(strings(&v, &e)[hits[0].start..hits[0].end], ["Clothing", "size"]);

        assert!(v.locate_phrase(&e, "Weight").is_empty());
        // "Smoking: 1" must not match the prefix of "Smoking: 12"
        assert!(v.locate_phrase(&e, "Smoking: 1").is_empty());
        assert_eq!(v.locate_phrase(&e, "Smoking").len(), 2);
    }
}
