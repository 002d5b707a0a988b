//! Toy models and objectives shared by the gradient checks.
#![allow(dead_code)]

use mmt_core::autodiff::gradcheck::{check_param_gradients, FD_STEP};
use mmt_core::autodiff::{Bound, Tape, Tensor, Var};
use mmt_core::data::Batch;
use mmt_core::embeddings::{assemble_table, InitMode, Vocabulary, BOS, EOS, PAD};
use mmt_core::losses::{margin_ranking_terms, multitask_loss, select_negatives, visual_max_margin, LossConfig};
use mmt_core::model::{Mode, ModelConfig, Seq2Seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 16 words plus the reserved ids gives a 20-row vocabulary.
pub fn toy_model(config: ModelConfig, seed: u64) -> Seq2Seq {
    let words: Vec<String> = (0..16).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build([words.as_slice()], config.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = assemble_table(None, &vocab, None, InitMode::Random, config.embedding_dim, &mut rng).unwrap();
    let tgt = assemble_table(None, &vocab, None, InitMode::Random, config.embedding_dim, &mut rng).unwrap();
    Seq2Seq::new(config, vocab.clone(), vocab, src, tgt, &mut rng).unwrap()
}

/// Every table and weight trainable so that each tensor gets checked.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        embedding_dim: 8,
        encoder_hidden: 6,
        decoder_hidden: 6,
        latent_dim: 10,
        decoder_fixed: false,
        ..Default::default()
    }
}

/// Redraws every parameter uniformly in `±scale` (pad rows stay zero).
///
/// At the default ±0.1 init the toy predictions have norms near 1e-3, where
/// cosine distance is so curved that step-1e-5 central differences carry
/// O(h²) errors above 1e-5; order-one parameters avoid that.
pub fn redraw_parameters(model: &mut Seq2Seq, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        let mut t = Tensor::uniform(model.store().value(id).shape(), -scale, scale, &mut rng);
        if model.store().get(id).name().ends_with("embedding") {
            t.row_mut(PAD).iter_mut().for_each(|x| *x = 0.0);
        }
        *model.store_mut().value_mut(id) = t;
    }
}

/// Toy model at an order-one gradcheck point.
pub fn gradcheck_model(config: ModelConfig, seed: u64) -> Seq2Seq {
    let mut m = toy_model(config, seed);
    redraw_parameters(&mut m, 0.5, seed);
    m
}

pub fn toy_batch(model: &Seq2Seq, size: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = model.src_vocab().len();
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.random_range(2..5);
        (0..len).map(|_| rng.random_range(4..v)).collect()
    };
    let src: Vec<Vec<usize>> = (0..size).map(|_| sentence(&mut rng)).collect();
    let tgt: Vec<Vec<usize>> = (0..size)
        .map(|_| {
            let mut t = vec![BOS];
            t.extend(sentence(&mut rng));
            t.push(EOS);
            t
        })
        .collect();
    let latent = model.config().latent_dim;
    let images = Tensor::new(vec![size, latent], (0..size * latent).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    Batch::new((0..size).collect(), &src, &tgt, Some(images)).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Part {
    Translation,
    Visual,
    Joint,
}

/// Unmasked teacher-forced predictions `[K,E]` and their gold ids.
fn predictions(model: &Seq2Seq, tape: &mut Tape, p: &Bound, batch: &Batch) -> (Var, Var, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mode = Mode::eval(&mut rng);
    let enc = model.encode(tape, p, batch, &mut mode).unwrap();
    let tf = model.teacher_forced(tape, p, batch, &enc, &mut mode).unwrap();
    let stacked = tape.concat(&tf.outputs, 0).unwrap();
    let mask = tf.mask.concat();
    let gold = tf.gold.concat();
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let preds = tape.embedding_lookup(stacked, &rows).unwrap();
    let projected = model.project_visual(tape, p, &enc).unwrap();
    (preds, projected, rows.iter().map(|&i| gold[i]).collect())
}

/// Negatives chosen at the unperturbed parameters.
pub fn fixed_negatives(model: &Seq2Seq, batch: &Batch, loss: &LossConfig) -> Vec<usize> {
    let mut tape = Tape::new();
    let p = model.store().bind(&mut tape);
    let (preds, _, gold) = predictions(model, &mut tape, &p, batch);
    select_negatives(tape.value(preds), &gold, model.target_table(), model.config().distance, loss.negative).unwrap()
}

pub fn objective(model: &Seq2Seq, tape: &mut Tape, p: &Bound, batch: &Batch, negatives: &[usize], loss: &LossConfig, part: Part) -> Var {
    let kind = model.config().distance;
    let (preds, projected, gold) = predictions(model, tape, p, batch);
    let table = model.target_table_var(p);
    let terms = margin_ranking_terms(tape, preds, table, &gold, negatives, loss.gamma, kind).unwrap();
    let jt = tape.sum(terms);
    let jt = tape.scale(jt, 1.0 / batch.size() as f64);
    let images = tape.constant(batch.visual().unwrap().clone());
    let jv = visual_max_margin(tape, projected, images, loss.alpha, kind).unwrap();
    match part {
        Part::Translation => jt,
        Part::Visual => jv,
        Part::Joint => multitask_loss(tape, jt, Some(jv), loss.lambda).unwrap(),
    }
}

/// Worst relative error per parameter tensor for one objective, along
/// with the objective value.
pub fn model_gradcheck(model: &Seq2Seq, batch: &Batch, loss: &LossConfig, part: Part) -> (f64, Vec<(String, f64)>) {
    let negatives = fixed_negatives(model, batch, loss);
    let frozen = model.clone();
    let mut store = model.store().clone();
    let value = {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let out = objective(&frozen, &mut tape, &p, batch, &negatives, loss, part);
        tape.value(out).item()
    };
    let reports = check_param_gradients(
        &mut store,
        |_, tape, p| Ok(objective(&frozen, tape, p, batch, &negatives, loss, part)),
        FD_STEP,
    )
    .unwrap();
    (value, reports.into_iter().map(|(n, r)| (n, r.max_relative_error)).collect())
}
