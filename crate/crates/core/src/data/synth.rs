//! Synthetic substitution translation task with correlated image features.
//!
//! Source words `x0..x{V-1}` are drawn from a Zipf law (rank `k+1` for
//! `x{k}`); each target sentence replaces `x{i}` by `y{σ(i)}` for a fixed
//! random bijection `σ`. The image feature of a pair is its normalized
//! source bag of words times a fixed random projection, plus noise and a
//! shared offset (so that centroid debiasing has something to remove).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corpus::{ParallelCorpus, Split};
use super::visual::VisualFeatureSet;
use crate::autodiff::Tensor;
use crate::embeddings::WordVectors;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of distinct words per language.
    pub vocab_size: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Dimension of the generated word vectors.
    pub embedding_dim: usize,
    /// Extra vector-file words that never occur in the corpus.
    pub oov_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 50,
            train_pairs: 1000,
            val_pairs: 100,
            test_pairs: 100,
            min_len: 4,
            max_len: 10,
            zipf_exponent: 1.0,
            seed: 1,
            feature_dim: 32,
            feature_noise: 0.1,
            embedding_dim: 32,
            oov_words: 20,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic spec: {m}")));
        if self.vocab_size == 0 || self.feature_dim == 0 || self.embedding_dim == 0 {
            return bad("vocab_size, feature_dim and embedding_dim must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.train_pairs == 0 {
            return bad("train_pairs must be positive");
        }
        if !(self.zipf_exponent >= 0.0 && self.feature_noise >= 0.0) {
            return bad("zipf_exponent and feature_noise must be non-negative");
        }
        Ok(())
    }

    /// Zipf probabilities of source ranks `1..=vocab_size`.
    pub fn zipf_probabilities(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.vocab_size).map(|k| (k as f64).powf(-self.zipf_exponent)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub spec: SyntheticSpec,
    /// `mapping[i]` is the target word index for source word `x{i}`.
    pub mapping: Vec<usize>,
    pub train: ParallelCorpus,
    pub val: ParallelCorpus,
    pub test: ParallelCorpus,
    /// One row per pair: train rows first, then val, then test.
    pub features: VisualFeatureSet,
    pub source_vectors: WordVectors,
    pub target_vectors: WordVectors,
}

pub fn source_word(i: usize) -> String {
    format!("x{i}")
}

pub fn target_word(i: usize) -> String {
    format!("y{i}")
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn word_vectors(prefix: &str, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<WordVectors> {
    let d = spec.embedding_dim;
    let offset: Vec<f64> = (0..d).map(|_| 2.0 * gaussian(rng)).collect();
    let mut out = WordVectors::new(d);
    let words = (0..spec.vocab_size)
        .map(|i| format!("{prefix}{i}"))
        .chain((0..spec.oov_words).map(|i| format!("{prefix}oov{i}")));
    for w in words {
        let v = offset.iter().map(|o| o + gaussian(rng)).collect();
        out.insert(w, v)?;
    }
    Ok(out)
}

pub fn generate_synthetic_task(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let v = spec.vocab_size;

    let mut mapping: Vec<usize> = (0..v).collect();
    mapping.shuffle(&mut rng);

    let projection: Vec<f64> = (0..v * spec.feature_dim).map(|_| gaussian(&mut rng)).collect();
    let offset: Vec<f64> = (0..spec.feature_dim).map(|_| rng.random_range(0.5..1.5)).collect();
    let zipf = WeightedIndex::new(spec.zipf_probabilities()).map_err(|e| Error::config(e.to_string()))?;

    let total = spec.train_pairs + spec.val_pairs + spec.test_pairs;
    let mut sources = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(total * spec.feature_dim);
    for _ in 0..total {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let sentence: Vec<usize> = (0..len).map(|_| zipf.sample(&mut rng)).collect();
        for (f, off) in offset.iter().enumerate() {
            let bow: f64 = sentence.iter().map(|&w| projection[w * spec.feature_dim + f]).sum::<f64>() / len as f64;
            features.push(bow + off + spec.feature_noise * gaussian(&mut rng));
        }
        sources.push(sentence);
    }

    let split_at = [spec.train_pairs, spec.train_pairs + spec.val_pairs, total];
    let make = |split: Split, lo: usize, hi: usize| {
        let src = sources[lo..hi].iter().map(|s| s.iter().map(|&w| source_word(w)).collect()).collect();
        let tgt = sources[lo..hi]
            .iter()
            .map(|s| s.iter().map(|&w| target_word(mapping[w])).collect())
            .collect();
        ParallelCorpus::new(split, src, tgt, Some((lo..hi).collect()))
    };
    let train = make(Split::Train, 0, split_at[0])?;
    let val = make(Split::Val, split_at[0], split_at[1])?;
    let test = make(Split::Test, split_at[1], split_at[2])?;

    let source_vectors = word_vectors("x", spec, &mut rng)?;
    let target_vectors = word_vectors("y", spec, &mut rng)?;
    Ok(SyntheticTask {
        spec: spec.clone(),
        mapping,
        train,
        val,
        test,
        features: VisualFeatureSet::new(Tensor::new(vec![total, spec.feature_dim], features)?)?,
        source_vectors,
        target_vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train_pairs: 200,
            val_pairs: 20,
            test_pairs: 20,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let (a, b) = (generate_synthetic_task(&small()).unwrap(), generate_synthetic_task(&small()).unwrap());
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.features, b.features);
        let c = generate_synthetic_task(&SyntheticSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn targets_are_mapped_sources() {
        let t = generate_synthetic_task(&small()).unwrap();
        assert_eq!(t.features.len(), 240);
        for c in [&t.train, &t.val, &t.test] {
            for (s, y) in c.source().iter().zip(c.target()) {
                assert_eq!(s.len(), y.len());
                for (a, b) in s.iter().zip(y) {
                    let i: usize = a[1..].parse().unwrap();
                    assert_eq!(*b, target_word(t.mapping[i]));
                }
            }
        }
        let mut sorted = t.mapping.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(t.test.images().unwrap()[0], 220);
    }

    #[test]
    fn vectors_cover_vocab_and_oov() {
        let t = generate_synthetic_task(&small()).unwrap();
        assert_eq!(t.source_vectors.len(), 70);
        assert!(t.target_vectors.get("y49").is_some());
        assert!(t.target_vectors.get("yoov3").is_some());
    }

    #[test]
    fn invalid_spec_rejected() {
        let bad = SyntheticSpec { min_len: 5, max_len: 3, ..small() };
        assert!(matches!(generate_synthetic_task(&bad), Err(Error::Config(_))));
    }
}
