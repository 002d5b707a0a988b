use rand::RngCore;

use super::{GruIds, HeadIds, Seq2Seq};
use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::data::Batch;
use crate::error::{Error, Result};

/// Encoder output for a batch of `B` sentences padded to `N` positions.
pub struct Encoded {
    /// `N` states of shape `[B, 2H]`, zero at masked positions.
    pub states: Vec<Var>,
    /// Source mask, row-major `B × N`.
    pub mask: Vec<bool>,
    /// Mean over unmasked positions, `[B, 2H]`.
    pub mean: Var,
    /// Attention keys `states[t] · W_key`.
    pub(crate) keys: Vec<Var>,
}

pub struct StepOutput {
    pub state: Var,
    pub context: Var,
    /// Attention weights `[B, N]`.
    pub weights: Var,
    /// Predicted embedding `[B, E]` or probabilities `[B, V]`.
    pub output: Var,
}

/// Teacher-forced decoder outputs for target positions `1..M`.
pub struct TeacherForced {
    /// One `[B, ·]` output per predicted position.
    pub outputs: Vec<Var>,
    /// Gold ids per predicted position.
    pub gold: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

/// Training flag plus the RNG consumed by dropout.
pub struct Mode<'a> {
    pub training: bool,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> Mode<'a> {
    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Mode { training: true, rng }
    }

    pub fn eval(rng: &'a mut dyn RngCore) -> Self {
        Mode { training: false, rng }
    }
}

impl Seq2Seq {
    /// One GRU update with `[r | z | n]` gate blocks:
    /// `h' = n + z ⊙ (h − n)`.
    pub(crate) fn gru_step(&self, tape: &mut Tape, p: &Bound, g: GruIds, x: Var, h: Var) -> Result<Var> {
        let hidden = tape.value(h).shape()[1];
        let gi = tape.matmul(x, p[g.w_ih])?;
        let gi = tape.add_bias(gi, p[g.b_ih])?;
        let gh = tape.matmul(h, p[g.w_hh])?;
        let gh = tape.add_bias(gh, p[g.b_hh])?;
        let gate = |tape: &mut Tape, k: usize| -> Result<(Var, Var)> {
            Ok((tape.narrow(gi, 1, k * hidden, hidden)?, tape.narrow(gh, 1, k * hidden, hidden)?))
        };
        let (ir, hr) = gate(tape, 0)?;
        let (iz, hz) = gate(tape, 1)?;
        let (in_, hn) = gate(tape, 2)?;
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(in_, rn)?;
        let n = tape.tanh(n);
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// Runs one direction over `inputs`; masked positions keep the previous
    /// state and output zeros.
    fn run_direction(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: GruIds,
        inputs: &[Var],
        masks: &[Vec<bool>],
        reverse: bool,
        zeros: Var,
    ) -> Result<Vec<Var>> {
        let n = inputs.len();
        let mut outputs = vec![zeros; n];
        let mut h = zeros;
        let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..n).rev()) } else { Box::new(0..n) };
        for t in order {
            let next = self.gru_step(tape, p, g, inputs[t], h)?;
            h = tape.select_rows(&masks[t], next, h)?;
            outputs[t] = tape.select_rows(&masks[t], next, zeros)?;
        }
        Ok(outputs)
    }

    /// Encodes source ids (`B × N`, row-major) under `mask`.
    pub fn encode_ids(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ids: &[usize],
        mask: &[bool],
        batch: usize,
        mode: &mut Mode,
    ) -> Result<Encoded> {
        if batch == 0 || ids.len() % batch != 0 || ids.len() != mask.len() || ids.is_empty() {
            return Err(Error::contract("encode: ids and mask must form a non-empty B × N matrix"));
        }
        let n = ids.len() / batch;
        let column = |t: usize| -> (Vec<usize>, Vec<bool>) {
            ((0..batch).map(|b| ids[b * n + t]).collect(), (0..batch).map(|b| mask[b * n + t]).collect())
        };
        let mut inputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        for t in 0..n {
            let (col, m) = column(t);
            inputs.push(tape.embedding_lookup(p[self.ids.src_embedding], &col)?);
            masks.push(m);
        }
        let lengths: Vec<f64> = (0..batch)
            .map(|b| mask[b * n..(b + 1) * n].iter().filter(|&&m| m).count() as f64)
            .collect();
        if lengths.contains(&0.0) {
            return Err(Error::contract("encode: a source row has no unmasked token"));
        }

        let h = self.config.encoder_hidden;
        let zeros = tape.constant(Tensor::zeros(&[batch, h]));
        let fwd = self.run_direction(tape, p, self.ids.enc_fwd, &inputs, &masks, false, zeros)?;
        let bwd = self.run_direction(tape, p, self.ids.enc_bwd, &inputs, &masks, true, zeros)?;

        let p_drop = self.config.dropout;
        let drop = self.config.dropout_sites.encoder_output;
        let mut states = Vec::with_capacity(n);
        for (f, b) in fwd.into_iter().zip(bwd) {
            let s = tape.concat(&[f, b], 1)?;
            let s = if drop { tape.dropout(s, p_drop, mode.training, mode.rng)? } else { s };
            states.push(s);
        }

        let mut total = states[0];
        for &s in &states[1..] {
            total = tape.add(total, s)?;
        }
        let inv = tape.constant(Tensor::new(vec![batch, 1], lengths.iter().map(|l| 1.0 / l).collect())?);
        let mean = tape.scale_rows(total, inv)?;

        let keys = states
            .iter()
            .map(|&s| tape.matmul(s, p[self.ids.attn_key]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoded {
            states,
            mask: mask.to_vec(),
            mean,
            keys,
        })
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, batch: &Batch, mode: &mut Mode) -> Result<Encoded> {
        self.encode_ids(tape, p, batch.src_ids(), batch.src_mask(), batch.size(), mode)
    }

    /// Decoder initial state `tanh(mean · W_init + b_init)`.
    pub fn initial_state(&self, tape: &mut Tape, p: &Bound, enc: &Encoded) -> Result<Var> {
        let x = tape.matmul(enc.mean, p[self.ids.init_w])?;
        let x = tape.add_bias(x, p[self.ids.init_b])?;
        Ok(tape.tanh(x))
    }

    /// Additive attention: `e_t = v · tanh(K_t + s W_query + b)`, softmax
    /// over unmasked positions, context = weighted sum of states.
    pub fn attend(&self, tape: &mut Tape, p: &Bound, enc: &Encoded, prev_state: Var) -> Result<(Var, Var)> {
        let q = tape.matmul(prev_state, p[self.ids.attn_query])?;
        let q = tape.add_bias(q, p[self.ids.attn_bias])?;
        let mut scores = Vec::with_capacity(enc.keys.len());
        for &k in &enc.keys {
            let a = tape.add(k, q)?;
            let a = tape.tanh(a);
            scores.push(tape.matmul(a, p[self.ids.attn_v])?);
        }
        let scores = tape.concat(&scores, 1)?;
        let weights = tape.masked_softmax(scores, &enc.mask)?;
        let mut context = None;
        for (t, &s) in enc.states.iter().enumerate() {
            let w = tape.narrow(weights, 1, t, 1)?;
            let term = tape.scale_rows(s, w)?;
            context = Some(match context {
                None => term,
                Some(c) => tape.add(c, term)?,
            });
        }
        Ok((context.expect("at least one source position"), weights))
    }

    /// Output head applied to a decoder state: `tanh(s W_o + b_o)` for the
    /// embedding-prediction head, `softmax(s W + b)` for the softmax head.
    pub fn head(&self, tape: &mut Tape, p: &Bound, state: Var, mode: &mut Mode) -> Result<Var> {
        let s = if self.config.dropout_sites.decoder_state {
            tape.dropout(state, self.config.dropout, mode.training, mode.rng)?
        } else {
            state
        };
        match self.ids.head {
            HeadIds::Embedding { w, b } => {
                let x = tape.matmul(s, p[w])?;
                let x = tape.add_bias(x, p[b])?;
                Ok(tape.tanh(x))
            }
            HeadIds::Softmax { w, b } => {
                let x = tape.matmul(s, p[w])?;
                let x = tape.add_bias(x, p[b])?;
                tape.softmax(x, 1)
            }
        }
    }

    /// Attention, GRU update on `[input; context]`, then the output head.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        enc: &Encoded,
        input: Var,
        prev_state: Var,
        mode: &mut Mode,
    ) -> Result<StepOutput> {
        let (context, weights) = self.attend(tape, p, enc, prev_state)?;
        let x = tape.concat(&[input, context], 1)?;
        let state = self.gru_step(tape, p, self.ids.dec, x, prev_state)?;
        let output = self.head(tape, p, state, mode)?;
        Ok(StepOutput {
            state,
            context,
            weights,
            output,
        })
    }

    /// Teacher-forced decoding of the batch targets: position `j` consumes
    /// gold token `j − 1` and predicts token `j`.
    pub fn teacher_forced(&self, tape: &mut Tape, p: &Bound, batch: &Batch, enc: &Encoded, mode: &mut Mode) -> Result<TeacherForced> {
        let mut state = self.initial_state(tape, p, enc)?;
        let steps = batch.tgt_len().saturating_sub(1);
        let mut out = TeacherForced {
            outputs: Vec::with_capacity(steps),
            gold: Vec::with_capacity(steps),
            mask: Vec::with_capacity(steps),
        };
        for j in 1..batch.tgt_len() {
            let input = tape.embedding_lookup(p[self.ids.tgt_embedding], &batch.tgt_column(j - 1))?;
            let step = self.decode_step(tape, p, enc, input, state, mode)?;
            state = step.state;
            out.outputs.push(step.output);
            out.gold.push(batch.tgt_column(j));
            out.mask.push(batch.tgt_mask_column(j));
        }
        Ok(out)
    }

    /// `v̂ = tanh(mean · W_v)`, `[B, latent]`.
    pub fn project_visual(&self, tape: &mut Tape, p: &Bound, enc: &Encoded) -> Result<Var> {
        let w = self
            .ids
            .visual
            .ok_or_else(|| Error::config("visual projection requested from a text-only model"))?;
        let x = tape.matmul(enc.mean, p[w])?;
        Ok(tape.tanh(x))
    }

    /// Target table as bound on `p`.
    pub fn target_table_var(&self, p: &Bound) -> Var {
        p[self.ids.tgt_embedding]
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::tests::{toy, toy_config};
    use super::*;
    use crate::autodiff::gradcheck::{check_param_gradients, FD_STEP};
    use crate::embeddings::{BOS, EOS};

    fn batch(src: &[Vec<usize>]) -> Batch {
        let tgt: Vec<Vec<usize>> = src.iter().map(|s| [vec![BOS], s.clone(), vec![EOS]].concat()).collect();
        Batch::new((0..src.len()).collect(), src, &tgt, None).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let mut m = toy(toy_config());
        let ids: Vec<_> = m.store().iter().map(|(id, _)| id).collect();
        for id in ids {
            m.store_mut().value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let p = m.store().bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = m.encode(&mut tape, &p, &batch(&[vec![4, 5, 6]]), &mut Mode::eval(&mut rng)).unwrap();
        for &s in &enc.states {
            assert!(tape.value(s).data().iter().all(|&x| x == 0.0));
        }
        let v = m.project_visual(&mut tape, &p, &enc).unwrap();
        assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        let s0 = m.initial_state(&mut tape, &p, &enc).unwrap();
        let out = m.head(&mut tape, &p, s0, &mut Mode::eval(&mut rng)).unwrap();
        assert!(tape.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn state_shape_and_masked_zeros() {
        let m = toy(toy_config());
        let mut tape = Tape::new();
        let p = m.store().bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batch(&[vec![4, 5], vec![6, 7, 8, 9, 10]]);
        let enc = m.encode(&mut tape, &p, &b, &mut Mode::eval(&mut rng)).unwrap();
        assert_eq!(enc.states.len(), 5);
        assert_eq!(tape.value(enc.states[0]).shape(), &[2, 12]);
        assert!(tape.value(enc.states[3]).row(0).iter().all(|&x| x == 0.0));
        assert!(tape.value(enc.states[3]).row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn padding_invariance() {
        let m = toy(toy_config());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = |src: &[usize], mask: &[bool], rng: &mut ChaCha8Rng| {
            let mut tape = Tape::new();
            let p = m.store().bind(&mut tape);
            let enc = m.encode_ids(&mut tape, &p, src, mask, 1, &mut Mode::eval(rng)).unwrap();
            let s0 = m.initial_state(&mut tape, &p, &enc).unwrap();
            let (_, w) = m.attend(&mut tape, &p, &enc, s0).unwrap();
            let v = m.project_visual(&mut tape, &p, &enc).unwrap();
            let states: Vec<Vec<f64>> = enc.states.iter().map(|&s| tape.value(s).data().to_vec()).collect();
            (states, tape.value(w).data().to_vec(), tape.value(v).data().to_vec())
        };
        let (h1, w1, v1) = run(&[4, 9, 6], &[true; 3], &mut rng);
        let (h2, w2, v2) = run(&[4, 9, 6, 0, 0], &[true, true, true, false, false], &mut rng);
        for t in 0..3 {
            assert!(h1[t].iter().zip(&h2[t]).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
        assert!(w1.iter().zip(&w2).all(|(a, b)| (a - b).abs() <= 1e-12));
        assert_eq!(&w2[3..], &[0.0, 0.0]);
        assert!(v1.iter().zip(&v2).all(|(a, b)| (a - b).abs() <= 1e-12));
        assert!(v1.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn single_position_attention() {
        let m = toy(toy_config());
        let mut tape = Tape::new();
        let p = m.store().bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = m.encode_ids(&mut tape, &p, &[4, 0, 0], &[true, false, false], 1, &mut Mode::eval(&mut rng)).unwrap();
        let s0 = m.initial_state(&mut tape, &p, &enc).unwrap();
        let (ctx, w) = m.attend(&mut tape, &p, &enc, s0).unwrap();
        assert_eq!(tape.value(w).data(), &[1.0, 0.0, 0.0]);
        assert_eq!(tape.value(ctx).data(), tape.value(enc.states[0]).data());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut m = toy(toy_config());
        let b = batch(&[vec![4, 5, 6], vec![7, 8]]);
        let model = m.clone();
        let reports = check_param_gradients(
            m.store_mut(),
            |_, tape, p| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let enc = model.encode(tape, p, &b, &mut Mode::eval(&mut rng))?;
                let mut total = tape.sum(enc.states[0]);
                for &s in &enc.states[1..] {
                    let x = tape.sum(s);
                    total = tape.add(total, x)?;
                }
                Ok(total)
            },
            FD_STEP,
        )
        .unwrap();
        for (name, r) in reports.iter().filter(|(n, _)| n.starts_with("encoder.")) {
            assert!(r.max_relative_error <= 1e-5, "{name}: {r:?}");
        }
    }
}
