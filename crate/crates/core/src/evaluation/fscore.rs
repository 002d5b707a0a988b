use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};

/// Lower edges of the frequency buckets; words below the first edge form
/// their own bucket.
pub const DEFAULT_BUCKET_EDGES: [u64; 6] = [1, 2, 5, 10, 100, 1000];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WordScore {
    pub token: String,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Per-word sentence-presence F-scores.
///
/// A word counts once per sentence however often it occurs. Precision is
/// the share of hypotheses containing the word whose reference also
/// contains it; recall is the converse. Undefined ratios are 0. Sorted by
/// token.
pub fn word_fscore<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Vec<WordScore> {
    // (in hyp, in ref, in both)
    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (h, r) in hypotheses.iter().zip(references) {
        let h: HashSet<&str> = h.iter().map(AsRef::as_ref).collect();
        let r: HashSet<&str> = r.iter().map(AsRef::as_ref).collect();
        for &w in &h {
            let c = counts.entry(w).or_default();
            c[0] += 1;
            if r.contains(w) {
                c[2] += 1;
            }
        }
        for &w in &r {
            counts.entry(w).or_default()[1] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(token, [in_hyp, in_ref, both])| {
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let (precision, recall) = (ratio(both, in_hyp), ratio(both, in_ref));
            let f = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            WordScore {
                token: token.to_string(),
                precision,
                recall,
                f,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyBucket {
    pub label: String,
    /// Inclusive lower frequency bound.
    pub min: u64,
    /// Exclusive upper bound, `None` for the last bucket.
    pub max: Option<u64>,
    pub words: usize,
    pub mean_f: f64,
}

fn check_edges(edges: &[u64]) -> Result<()> {
    if edges.is_empty() {
        return Err(Error::config("at least one bucket edge is needed"));
    }
    if edges[0] == 0 {
        return Err(Error::config("bucket edges must be at least 1"));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("bucket edges {edges:?} are not strictly increasing")));
    }
    Ok(())
}

fn label(min: u64, max: Option<u64>) -> String {
    match max {
        None => format!("{min}+"),
        Some(m) if m == min + 1 => min.to_string(),
        Some(m) => format!("{min}-{}", m - 1),
    }
}

/// Groups word scores by training frequency and averages F per bucket.
///
/// `edges` are the lower bounds of the buckets after the implicit `[0, e0)`
/// one. Empty buckets are reported with mean 0.
pub fn fscore_by_frequency(
    records: &[WordScore],
    frequency: impl Fn(&str) -> u64,
    edges: &[u64],
) -> Result<Vec<FrequencyBucket>> {
    check_edges(edges)?;
    let mut bounds = vec![(0, Some(edges[0]))];
    for (i, &e) in edges.iter().enumerate() {
        bounds.push((e, edges.get(i + 1).copied()));
    }
    let mut sums = vec![(0usize, 0.0f64); bounds.len()];
    for r in records {
        let f = frequency(&r.token);
        // bucket i covers [edges[i-1], edges[i])
        let i = edges.partition_point(|&e| e <= f);
        sums[i].0 += 1;
        sums[i].1 += r.f;
    }
    Ok(bounds
        .into_iter()
        .zip(sums)
        .map(|((min, max), (words, total))| FrequencyBucket {
            label: label(min, max),
            min,
            max,
            words,
            mean_f: if words == 0 { 0.0 } else { total / words as f64 },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
    }

    fn get<'a>(scores: &'a [WordScore], w: &str) -> &'a WordScore {
        scores.iter().find(|s| s.token == w).unwrap()
    }

    #[test]
    fn cat_example() {
        let hyp = corpus(&["a cat", "the cat"]);
        let refs = corpus(&["a cat", "the dog"]);
        let s = word_fscore(&hyp, &refs);
        let cat = get(&s, "cat");
        assert_eq!((cat.precision, cat.recall), (0.5, 1.0));
        assert!((cat.f - 2.0 / 3.0).abs() < 1e-15);
        let dog = get(&s, "dog");
        assert_eq!((dog.precision, dog.recall, dog.f), (0.0, 0.0, 0.0));
        assert_eq!(get(&s, "the").f, 1.0);
    }

    #[test]
    fn identical_corpora_score_one() {
        let c = corpus(&["a b b c", "c d", ""]);
        assert!(word_fscore(&c, &c).iter().all(|s| s.f == 1.0));
        assert_eq!(word_fscore(&c, &c).len(), 4);
    }

    #[test]
    fn repeats_count_once() {
        let s = word_fscore(&corpus(&["x x x", "y"]), &corpus(&["x", "x"]));
        let x = get(&s, "x");
        assert_eq!((x.precision, x.recall), (1.0, 0.5));
    }

    #[test]
    fn buckets() {
        let rec = |t: &str, f: f64| WordScore {
            token: t.into(),
            precision: f,
            recall: f,
            f,
        };
        let records = vec![rec("a", 0.2), rec("b", 0.4), rec("c", 1.0), rec("d", 0.5), rec("e", 0.0)];
        let freq = |t: &str| match t {
            "a" => 0,
            "b" => 1,
            "c" => 3,
            "d" => 4,
            _ => 5000,
        };
        let b = fscore_by_frequency(&records, freq, &DEFAULT_BUCKET_EDGES).unwrap();
        let labels: Vec<&str> = b.iter().map(|x| x.label.as_str()).collect();
        assert_eq!(labels, ["0", "1", "2-4", "5-9", "10-99", "100-999", "1000+"]);
        let counts: Vec<usize> = b.iter().map(|x| x.words).collect();
        assert_eq!(counts, [1, 1, 2, 0, 0, 0, 1]);
        assert!((b[2].mean_f - 0.75).abs() < 1e-15);
        assert_eq!(b[3].mean_f, 0.0);

        assert!(fscore_by_frequency(&records, freq, &[1, 1]).is_err());
        assert!(fscore_by_frequency(&records, freq, &[5, 2]).is_err());
        assert!(fscore_by_frequency(&records, freq, &[0, 2]).is_err());
        assert!(fscore_by_frequency(&records, freq, &[]).is_err());
    }
}
