use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_RESERVED: usize = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

const RESERVED: [&str; NUM_RESERVED] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

/// Dense token ↔ id map with training-corpus frequencies.
///
/// Ids `0..4` are always `<pad> <unk> <s> </s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size − 4` most frequent tokens of `sentences`, breaking
    /// frequency ties lexicographically.
    pub fn build<'a, I, S>(sentences: I, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in sentences {
            for tok in sentence {
                let tok = tok.as_ref();
                if !RESERVED.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(NUM_RESERVED));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0; NUM_RESERVED];
        for (tok, count) in ranked {
            tokens.push(tok.to_string());
            freqs.push(count);
        }
        Self::from_parts(tokens, freqs).expect("built vocabulary is well formed")
    }

    /// Rebuilds a vocabulary from its serialized token list and counts.
    pub fn from_parts(tokens: Vec<String>, freqs: Vec<u64>) -> Result<Self> {
        if tokens.len() != freqs.len() {
            return Err(Error::Format("vocabulary token/frequency length mismatch".into()));
        }
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != RESERVED {
            return Err(Error::Format("vocabulary must start with <pad> <unk> <s> </s>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, freqs, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.freqs
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Training frequency of `token`, 0 when it is not in the vocabulary.
    pub fn frequency_of(&self, token: &str) -> u64 {
        self.id(token).map_or(0, |i| self.freqs[i])
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}
