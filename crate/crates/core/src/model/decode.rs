use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::Mode;
use super::{Feedback, OutputHead, Seq2Seq};
use crate::autodiff::{Tape, Var};
use crate::data::MAX_SENTENCE_LEN;
use crate::embeddings::{NeighborIndex, BOS, EOS, PAD, UNK};
use crate::error::Result;

fn argmax_eligible(probs: &[f64]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (w, &p) in probs.iter().enumerate() {
        if w != PAD && w != BOS && (best.0 == usize::MAX || p > best.1) {
            best = (w, p);
        }
    }
    best.0
}

impl Seq2Seq {
    /// Greedy decoding of encoded source rows (`B × N`, row-major).
    ///
    /// Each step emits the nearest target-table row to the predicted
    /// embedding (`<pad>` and `<s>` excluded), or the most probable word for
    /// the softmax head, and stops at `</s>` or after `max_len` steps. The
    /// returned ids exclude `</s>`.
    pub fn translate_ids(&self, ids: &[usize], mask: &[bool], batch: usize, max_len: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); batch];
        if max_len == 0 {
            return Ok(out);
        }
        let mut tape = Tape::new();
        let p = self.store().bind(&mut tape);
        // evaluation mode never draws from the RNG
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mode = Mode::eval(&mut rng);
        let enc = self.encode_ids(&mut tape, &p, ids, mask, batch, &mut mode)?;
        let mut state = self.initial_state(&mut tape, &p, &enc)?;
        let table = self.target_table_var(&p);
        let index = NeighborIndex::new(self.target_table(), self.config().distance)?;

        let mut done = vec![false; batch];
        let mut input: Var = tape.embedding_lookup(table, &vec![BOS; batch])?;
        for _ in 0..max_len {
            let step = self.decode_step(&mut tape, &p, &enc, input, state, &mut mode)?;
            state = step.state;
            let values = tape.value(step.output);
            let emitted: Vec<usize> = match self.config().output_head {
                OutputHead::EmbeddingPrediction => values
                    .rows()
                    .map(|row| match row.iter().any(|&x| x != 0.0) {
                        true => index.nearest(row, true).map(|r| r.0),
                        // every row ties with a directionless prediction
                        false => Ok(UNK),
                    })
                    .collect::<Result<_>>()?,
                OutputHead::Softmax => values.rows().map(argmax_eligible).collect(),
            };
            for (b, &w) in emitted.iter().enumerate() {
                if done[b] {
                    continue;
                }
                if w == EOS {
                    done[b] = true;
                } else {
                    out[b].push(w);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            input = match (self.config().feedback, self.config().output_head) {
                (Feedback::Predicted, OutputHead::EmbeddingPrediction) => step.output,
                _ => tape.embedding_lookup(table, &emitted)?,
            };
        }
        Ok(out)
    }

    /// Translates tokenized sentences in chunks of `batch_size`, keeping
    /// input order. Empty inputs give empty outputs; inputs longer than the
    /// sentence cap are truncated.
    pub fn translate_sentences<S: AsRef<str>>(&self, sentences: &[Vec<S>], max_len: usize, batch_size: usize) -> Result<Vec<Vec<String>>> {
        let mut out = vec![Vec::new(); sentences.len()];
        let live: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
        for chunk in live.chunks(batch_size.max(1)) {
            let encoded: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| {
                    let mut ids = self.src_vocab().encode(&sentences[i]);
                    ids.truncate(MAX_SENTENCE_LEN);
                    ids
                })
                .collect();
            let n = encoded.iter().map(Vec::len).max().unwrap_or(0);
            let mut ids = Vec::with_capacity(chunk.len() * n);
            let mut mask = Vec::with_capacity(chunk.len() * n);
            for e in &encoded {
                ids.extend(e.iter().copied().chain(std::iter::repeat(PAD)).take(n));
                mask.extend((0..n).map(|t| t < e.len()));
            }
            let hyps = self.translate_ids(&ids, &mask, chunk.len(), max_len)?;
            for (&i, h) in chunk.iter().zip(hyps) {
                out[i] = self.tgt_vocab().decode(&h);
            }
        }
        Ok(out)
    }

    /// Translates one tokenized sentence.
    pub fn translate<S: AsRef<str>>(&self, source: &[S], max_len: usize) -> Result<Vec<String>> {
        let tokens: Vec<&str> = source.iter().map(AsRef::as_ref).collect();
        Ok(self.translate_sentences(&[tokens], max_len, 1)?.remove(0))
    }
}
