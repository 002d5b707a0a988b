use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::ParallelCorpus;
use super::visual::VisualFeatureSet;
use crate::autodiff::Tensor;
use crate::embeddings::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Sentences longer than this many tokens are truncated.
pub const MAX_SENTENCE_LEN: usize = 100;

/// Right-padded id matrices (row-major, `B × len`) with masks. Target rows
/// are wrapped in `<s> ... </s>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    indices: Vec<usize>,
    src: Vec<usize>,
    src_mask: Vec<bool>,
    src_len: usize,
    tgt: Vec<usize>,
    tgt_mask: Vec<bool>,
    tgt_len: usize,
    visual: Option<Tensor>,
}

fn pad_rows(rows: &[Vec<usize>]) -> (Vec<usize>, Vec<bool>, usize) {
    let len = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(rows.len() * len);
    let mut mask = Vec::with_capacity(rows.len() * len);
    for r in rows {
        ids.extend(r.iter().copied().chain(std::iter::repeat(PAD)).take(len));
        mask.extend((0..len).map(|t| t < r.len()));
    }
    (ids, mask, len)
}

impl Batch {
    /// Builds a batch from encoded sentences; target rows must already carry
    /// `<s>`/`</s>`.
    pub fn new(indices: Vec<usize>, src: &[Vec<usize>], tgt: &[Vec<usize>], visual: Option<Tensor>) -> Result<Self> {
        let b = indices.len();
        if b == 0 || src.len() != b || tgt.len() != b {
            return Err(Error::contract("batch rows must be non-empty and aligned"));
        }
        if src.iter().chain(tgt).any(Vec::is_empty) {
            return Err(Error::contract("every batch row needs at least one token"));
        }
        if let Some(v) = &visual {
            if v.dims2().map(|d| d.0) != Some(b) {
                return Err(Error::shape("batch visual block", &[v.shape(), &[b]]));
            }
        }
        let (src, src_mask, src_len) = pad_rows(src);
        let (tgt, tgt_mask, tgt_len) = pad_rows(tgt);
        Ok(Batch {
            indices,
            src,
            src_mask,
            src_len,
            tgt,
            tgt_mask,
            tgt_len,
            visual,
        })
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// Corpus positions of the rows.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_len
    }

    pub fn src_ids(&self) -> &[usize] {
        &self.src
    }

    pub fn src_mask(&self) -> &[bool] {
        &self.src_mask
    }

    pub fn tgt_ids(&self) -> &[usize] {
        &self.tgt
    }

    pub fn tgt_mask(&self) -> &[bool] {
        &self.tgt_mask
    }

    pub fn visual(&self) -> Option<&Tensor> {
        self.visual.as_ref()
    }

    fn column<T: Copy>(data: &[T], width: usize, t: usize) -> Vec<T> {
        data.iter().skip(t).step_by(width).copied().collect()
    }

    pub fn src_column(&self, t: usize) -> Vec<usize> {
        Self::column(&self.src, self.src_len, t)
    }

    pub fn src_mask_column(&self, t: usize) -> Vec<bool> {
        Self::column(&self.src_mask, self.src_len, t)
    }

    pub fn tgt_column(&self, t: usize) -> Vec<usize> {
        Self::column(&self.tgt, self.tgt_len, t)
    }

    pub fn tgt_mask_column(&self, t: usize) -> Vec<bool> {
        Self::column(&self.tgt_mask, self.tgt_len, t)
    }

    /// Unpadded source length of each row.
    pub fn src_lengths(&self) -> Vec<usize> {
        self.src_mask.chunks(self.src_len).map(|m| m.iter().filter(|&&x| x).count()).collect()
    }

    /// Unmasked target positions, `<s>` and `</s>` included.
    pub fn target_token_count(&self) -> usize {
        self.tgt_mask.iter().filter(|&&m| m).count()
    }
}

fn truncate(ids: &mut Vec<usize>, cap: usize) -> bool {
    let long = ids.len() > cap;
    ids.truncate(cap);
    long
}

/// Encodes and batches `corpus`.
///
/// With a seed, sentences are shuffled, grouped by source length so that
/// rows of a batch have similar lengths, and the batch order is shuffled
/// again; the result depends only on the seed. Without a seed, batches
/// follow corpus order. A visual block is attached when both the corpus has
/// image indexes and `features` is given.
pub fn make_batches(
    corpus: &ParallelCorpus,
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    features: Option<&VisualFeatureSet>,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if let Some(f) = features {
        corpus.check_images(f.len())?;
    }
    let mut truncated = 0usize;
    let mut src = Vec::with_capacity(corpus.len());
    let mut tgt = Vec::with_capacity(corpus.len());
    for (s, t) in corpus.source().iter().zip(corpus.target()) {
        let mut s = vocab_src.encode(s);
        let mut t = vocab_tgt.encode(t);
        if s.is_empty() {
            return Err(Error::contract("empty source sentence"));
        }
        truncated += usize::from(truncate(&mut s, MAX_SENTENCE_LEN) | truncate(&mut t, MAX_SENTENCE_LEN));
        t.insert(0, BOS);
        t.push(EOS);
        src.push(s);
        tgt.push(t);
    }
    if truncated > 0 {
        log::warn!("truncated {truncated} sentence pairs to {MAX_SENTENCE_LEN} tokens");
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    if let Some(rng) = rng.as_mut() {
        order.shuffle(rng);
        order.sort_by_key(|&i| src[i].len());
    }
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if let Some(rng) = rng.as_mut() {
        chunks.shuffle(rng);
    }

    let images = corpus.images().zip(features);
    chunks
        .into_iter()
        .map(|idx| {
            let s: Vec<Vec<usize>> = idx.iter().map(|&i| src[i].clone()).collect();
            let t: Vec<Vec<usize>> = idx.iter().map(|&i| tgt[i].clone()).collect();
            let visual = match images {
                Some((img, f)) => Some(f.gather(&idx.iter().map(|&i| img[i]).collect::<Vec<_>>())?),
                None => None,
            };
            Batch::new(idx, &s, &t, visual)
        })
        .collect()
}
