use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{corpus_bleu, fscore_by_frequency, word_fscore, FrequencyBucket};
use crate::error::{Error, Result};

/// Occurrence counts of every token in a corpus.
pub fn token_frequencies<S: AsRef<str>>(sentences: &[Vec<S>]) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(t.as_ref().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WordRecord {
    pub token: String,
    pub frequency: u64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub bleu: f64,
    pub sentences: usize,
    pub words: Vec<WordRecord>,
    pub buckets: Vec<FrequencyBucket>,
}

impl EvaluationReport {
    /// Scores `hypotheses` against `references`. `train_frequency` gives
    /// each word's count in the training targets (0 if unseen).
    pub fn build<S: AsRef<str>>(
        hypotheses: &[Vec<S>],
        references: &[Vec<S>],
        train_frequency: &HashMap<String, u64>,
        edges: &[u64],
    ) -> Result<Self> {
        let (h, r) = (as_str(hypotheses), as_str(references));
        let bleu = corpus_bleu(&h, &r)?;
        let scores = word_fscore(&h, &r);
        let freq = |t: &str| train_frequency.get(t).copied().unwrap_or(0);
        let buckets = fscore_by_frequency(&scores, freq, edges)?;
        let words = scores
            .into_iter()
            .map(|s| WordRecord {
                frequency: freq(&s.token),
                token: s.token,
                precision: s.precision,
                recall: s.recall,
                f: s.f,
            })
            .collect();
        Ok(EvaluationReport {
            bleu,
            sentences: hypotheses.len(),
            words,
            buckets,
        })
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "sentences: {}", self.sentences).unwrap();
        writeln!(s, "BLEU: {:.2}", self.bleu).unwrap();
        writeln!(s, "word types: {}", self.words.len()).unwrap();
        writeln!(s, "F-score by training frequency:").unwrap();
        for b in &self.buckets {
            writeln!(s, "  {:>9}  {:.2}  ({} words)", b.label, b.mean_f, b.words).unwrap();
        }
        s
    }

    pub fn words_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["token", "frequency", "precision", "recall", "f"]).map_err(csv_err)?;
        for r in &self.words {
            w.write_record([
                r.token.clone(),
                r.frequency.to_string(),
                format!("{:.2}", r.precision),
                format!("{:.2}", r.recall),
                format!("{:.2}", r.f),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn buckets_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bucket", "min", "max", "words", "mean_f"]).map_err(csv_err)?;
        for b in &self.buckets {
            w.write_record([
                b.label.clone(),
                b.min.to_string(),
                b.max.map(|m| (m - 1).to_string()).unwrap_or_default(),
                b.words.to_string(),
                format!("{:.2}", b.mean_f),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Writes `summary.txt`, `words.csv` and `buckets.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        std::fs::write(dir.join("words.csv"), self.words_csv()?)?;
        std::fs::write(dir.join("buckets.csv"), self.buckets_csv()?)?;
        Ok(())
    }
}

fn as_str<S: AsRef<str>>(corpus: &[Vec<S>]) -> Vec<Vec<&str>> {
    corpus.iter().map(|s| s.iter().map(AsRef::as_ref).collect()).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::contract("mean of no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// `mean±sd` at two decimals, dropping the sd's leading zero: `51.00±.37`.
pub fn format_mean_sd(values: &[f64]) -> Result<String> {
    let (mean, sd) = mean_sd(values)?;
    let sd = format!("{sd:.2}");
    let sd = sd.strip_prefix('0').unwrap_or(&sd);
    Ok(format!("{mean:.2}±{sd}"))
}
