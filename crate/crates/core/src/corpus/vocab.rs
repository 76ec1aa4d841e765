use std::collections::HashMap;

use super::{Record, Tokenization};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token ↔ id bijection with the four reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).unwrap()
    }
}

impl Vocab {
    /// Builds a vocabulary from the non-reserved tokens, in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("vocabulary repeats token `{t}`")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    /// Counts tokens and keeps those seen at least `min_count` times, ordered
    /// by frequency (descending) and then lexicographically.
    pub fn from_counts<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            if !RESERVED.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string())).unwrap()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of ids beyond the reserved ones.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Non-reserved tokens in id order.
    pub fn content(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Source vocabulary over symptom tokens (with `min_count`) and herb
/// vocabulary over every herb that occurs.
pub fn build_vocab(records: &[Record], tokenization: Tokenization, min_count: usize) -> (Vocab, Vocab) {
    let tokens: Vec<Vec<String>> =
        records.iter().map(|r| tokenization.tokenize(&r.symptoms)).collect();
    let source = Vocab::from_counts(tokens.iter().flatten().map(String::as_str), min_count);
    let herbs = Vocab::from_counts(records.iter().flat_map(|r| r.herbs.iter().map(String::as_str)), 1);
    (source, herbs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs() -> Vec<Record> {
        vec![
            Record::new("ab a", vec!["X".into(), "Y".into()]),
            Record::new("cb", vec!["Y".into()]),
        ]
    }

    #[test]
    fn reserved_ids_and_ordering() {
        let (src, herbs) = build_vocab(&recs(), Tokenization::Chars, 1);
        assert_eq!(&src.tokens()[..4], &RESERVED.map(String::from));
        // a:2 b:2 c:1
        assert_eq!(src.content(), &["a", "b", "c"]);
        assert_eq!(herbs.content(), &["Y", "X"]);
        assert_eq!(herbs.get("Y"), Some(4));
    }

    #[test]
    fn min_count_boundary() {
        let (src, _) = build_vocab(&recs(), Tokenization::Chars, 2);
        assert_eq!(src.id("a"), 4);
        assert_eq!(src.id("c"), UNK);
        assert_eq!(src.encode(&["c".into(), "b".into()]), vec![UNK, 5]);
    }

    #[test]
    fn deterministic_across_builds() {
        let a = build_vocab(&recs(), Tokenization::Whitespace, 1);
        let b = build_vocab(&recs(), Tokenization::Whitespace, 1);
        assert_eq!(a, b);
    }

    #[test]
    fn rebuild_from_tokens_is_identical() {
        let (src, _) = build_vocab(&recs(), Tokenization::Chars, 1);
        assert_eq!(Vocab::from_tokens(src.content().to_vec()).unwrap(), src);
        assert!(Vocab::from_tokens(vec!["<unk>".to_string()]).is_err());
    }
}
