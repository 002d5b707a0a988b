use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Pooled n-gram statistics of a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped matches per order `1..=4`.
    pub matches: [usize; MAX_ORDER],
    /// Hypothesis n-grams per order.
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add<T: Eq + Hash>(&mut self, hyp: &[T], reference: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
            self.matches[n - 1] += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    /// BLEU-4 in `[0, 100]`.
    ///
    /// A zero precision at order `n` is replaced by `1 / (2 · totals[n])`.
    /// Orders with no hypothesis n-grams at all are left out of the
    /// geometric mean. No hypothesis tokens at all gives 0.
    pub fn score(&self) -> f64 {
        if self.totals[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            let p = if m == 0 { 1.0 / (2.0 * t as f64) } else { m as f64 / t as f64 };
            log_sum += p.ln();
            orders += 1;
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

/// Corpus-level BLEU-4 with a single reference per hypothesis.
pub fn corpus_bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::contract("BLEU of an empty hypothesis list"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h, r);
    }
    Ok(stats.score())
}
