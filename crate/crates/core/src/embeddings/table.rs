use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::debias::{debias_all_but_top, DebiasReport};
use super::vectors::WordVectors;
use super::vocab::{Vocabulary, BOS, EOS, PAD, UNK};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Half-width of the uniform range used for randomly initialized rows.
pub const RANDOM_INIT_RANGE: f64 = 0.1;

// Fixed seed for the reserved <s>/</s> rows of pretrained tables, so that
// assembly stays a pure function of its inputs.
const RESERVED_ROW_SEED: u64 = 0x5eed_0b05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Pretrained,
    Random,
}

/// A `V×D` embedding matrix aligned to a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
    fixed: bool,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor, fixed: bool) -> Result<Self> {
        if matrix.dims2().is_none() {
            return Err(Error::shape("embedding table", &[matrix.shape()]));
        }
        if !matrix.is_finite() {
            return Err(Error::contract("embedding table has non-finite entries"));
        }
        Ok(EmbeddingTable { matrix, fixed })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn fixed(&self) -> bool {
        self.fixed
    }

    pub fn set_fixed(&mut self, fixed: bool) {
        self.fixed = fixed;
    }

    /// All-but-the-top postprocessing with the pad row excluded and kept zero.
    pub fn debias(&mut self, k: usize) -> Result<DebiasReport> {
        let (debiased, report) = debias_all_but_top(&self.matrix, k, &[PAD])?;
        self.matrix = debiased;
        Ok(report)
    }
}

/// Mean of the pretrained vectors whose token is not in `vocab`; falls back
/// to the mean of all vectors when every pretrained token is in `vocab`.
pub fn build_unknown_embedding(raw: &WordVectors, vocab: &Vocabulary) -> Vec<f64> {
    let mean_of = |filter: &dyn Fn(&str) -> bool| -> Option<Vec<f64>> {
        let mut sum = vec![0.0; raw.dim()];
        let mut n = 0usize;
        for (_, v) in raw.iter().filter(|(t, _)| filter(t)) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            n += 1;
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    };
    mean_of(&|t| !vocab.contains(t))
        .or_else(|| mean_of(&|_| true))
        .unwrap_or_else(|| vec![0.0; raw.dim()])
}

/// Builds the table for `vocab`.
///
/// Pretrained: row = pretrained vector when present, else `unk_vector`;
/// `<s>`/`</s>` get fixed pseudo-random directions scaled to the mean
/// pretrained row norm. Random: rows ~ uniform(−0.1, 0.1) drawn from `rng`.
/// The pad row is zero in both modes.
pub fn assemble_table<R: Rng + ?Sized>(
    raw: Option<&WordVectors>,
    vocab: &Vocabulary,
    unk_vector: Option<&[f64]>,
    mode: InitMode,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let v = vocab.len();
    let mut matrix = match mode {
        InitMode::Random => Tensor::uniform(&[v, dim], -RANDOM_INIT_RANGE, RANDOM_INIT_RANGE, rng),
        InitMode::Pretrained => {
            let raw = raw.ok_or_else(|| Error::config("pretrained init requested without word vectors"))?;
            if raw.dim() != dim {
                return Err(Error::config(format!(
                    "word vectors have dimension {} but the model expects {dim}",
                    raw.dim()
                )));
            }
            let unk = unk_vector.ok_or_else(|| Error::contract("pretrained init requires an unknown-word vector"))?;
            if unk.len() != dim {
                return Err(Error::shape("assemble_table", &[&[unk.len()], &[dim]]));
            }
            pretrained_matrix(raw, vocab, unk)
        }
    };
    matrix.row_mut(PAD).iter_mut().for_each(|x| *x = 0.0);
    EmbeddingTable::new(matrix, false)
}

/// Pretrained table for `vocab` (unknown words get the mean of the
/// out-of-vocabulary vectors), debiased with `top_k` components when given.
pub fn pretrained_table(raw: &WordVectors, vocab: &Vocabulary, top_k: Option<usize>) -> Result<(EmbeddingTable, Option<DebiasReport>)> {
    let unk = build_unknown_embedding(raw, vocab);
    // pretrained assembly draws nothing from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut table = assemble_table(Some(raw), vocab, Some(&unk), InitMode::Pretrained, raw.dim(), &mut rng)?;
    let report = top_k.map(|k| table.debias(k)).transpose()?;
    Ok((table, report))
}

fn pretrained_matrix(raw: &WordVectors, vocab: &Vocabulary, unk: &[f64]) -> Tensor {
    let dim = raw.dim();
    let mut matrix = Tensor::zeros(&[vocab.len(), dim]);
    let mut norm_sum = 0.0;
    let mut found = 0usize;
    for (id, tok) in vocab.tokens().iter().enumerate().skip(UNK) {
        let row = match raw.get(tok) {
            Some(v) => {
                norm_sum += v.iter().map(|x| x * x).sum::<f64>().sqrt();
                found += 1;
                v
            }
            None => unk,
        };
        matrix.row_mut(id).copy_from_slice(row);
    }
    let target_norm = if found > 0 { norm_sum / found as f64 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(RESERVED_ROW_SEED);
    for id in [BOS, EOS] {
        let direction: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = direction.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (dst, x) in matrix.row_mut(id).iter_mut().zip(direction) {
            *dst = x / n * target_norm;
        }
    }
    matrix
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::vectors::parse_word_vectors;

    fn vocab(words: &str) -> Vocabulary {
        let s: Vec<String> = words.split_whitespace().map(String::from).collect();
        Vocabulary::build([s.as_slice()], 100)
    }

    #[test]
    fn single_oov_word_is_unknown_vector() {
        let raw = parse_word_vectors("a 1 2\nzz 0.5 -3\n".as_bytes(), None).unwrap();
        assert_eq!(build_unknown_embedding(&raw, &vocab("a")), vec![0.5, -3.0]);
    }

    #[test]
    fn two_oov_words_average() {
        let raw = parse_word_vectors("p 1 0\nq 0 1\na 9 9\n".as_bytes(), None).unwrap();
        assert_eq!(build_unknown_embedding(&raw, &vocab("a")), vec![0.5, 0.5]);
    }

    #[test]
    fn all_in_vocab_falls_back_to_global_mean() {
        let raw = parse_word_vectors("a 1 0\nb 3 2\n".as_bytes(), None).unwrap();
        assert_eq!(build_unknown_embedding(&raw, &vocab("a b")), vec![2.0, 1.0]);
    }

    #[test]
    fn pretrained_rows_copied_and_unknown_filled() {
        let raw = parse_word_vectors("a 1 2\nzz 5 5\n".as_bytes(), None).unwrap();
        let v = vocab("a b");
        let unk = build_unknown_embedding(&raw, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = assemble_table(Some(&raw), &v, Some(&unk), InitMode::Pretrained, 2, &mut rng).unwrap();
        let m = t.matrix();
        assert_eq!(m.row(v.id("a").unwrap()), &[1.0, 2.0]);
        assert_eq!(m.row(v.id("b").unwrap()), &[5.0, 5.0]);
        assert_eq!(m.row(UNK), &[5.0, 5.0]);
        assert_eq!(m.row(PAD), &[0.0, 0.0]);
        assert_ne!(m.row(BOS), m.row(EOS));
    }

    #[test]
    fn pretrained_is_pure() {
        let raw = parse_word_vectors("a 1 2\nzz 5 5\n".as_bytes(), None).unwrap();
        let v = vocab("a b");
        let unk = build_unknown_embedding(&raw, &v);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let t1 = assemble_table(Some(&raw), &v, Some(&unk), InitMode::Pretrained, 2, &mut r1).unwrap();
        let t2 = assemble_table(Some(&raw), &v, Some(&unk), InitMode::Pretrained, 2, &mut r2).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn random_mode_reproducible_and_bounded() {
        let v = vocab("a b c");
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            assemble_table(None, &v, None, InitMode::Random, 8, &mut rng).unwrap()
        };
        let (t1, t2) = (make(), make());
        assert_eq!(t1, t2);
        assert!(t1.matrix().row(PAD).iter().all(|&x| x == 0.0));
        assert!(t1.matrix().data().iter().all(|x| x.abs() < RANDOM_INIT_RANGE));
    }

    #[test]
    fn pretrained_without_vectors_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = assemble_table(None, &vocab("a"), None, InitMode::Pretrained, 2, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
