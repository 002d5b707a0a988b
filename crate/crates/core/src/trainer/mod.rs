//! Multitask training loop.

mod config;
mod log;

pub use self::config::{seeded_rng, Schedule, Stream, TrainConfig, DEFAULT_EPOCHS, DEFAULT_PATIENCE};
pub use self::log::{EpochRecord, TrainLog};

use std::time::Instant;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{clip_grad_norm, Adam, Bound, ParamStore, Tape, Var};
use crate::canonical::config_hash;
use crate::data::{make_batches, Batch, ParallelCorpus, VisualFeatureSet};
use crate::error::{Error, Result};
use crate::evaluation::corpus_bleu;
use crate::losses::{cross_entropy_loss, margin_ranking_loss, multitask_loss, visual_max_margin};
use crate::model::{Mode, ModelConfig, OutputHead, Seq2Seq};

/// Which losses a step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Joint,
    Translation,
    Visual,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub translation: Option<f64>,
    pub visual: Option<f64>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm after clipping.
    pub clipped_norm: f64,
}

// Dropout can zero a whole prediction; cosine distance is undefined there,
// so such rows are left out of the ranking terms.
fn has_direction(row: &[f64]) -> bool {
    row.iter().any(|&x| x != 0.0)
}

/// Loss terms of one batch on a tape.
pub struct BatchLoss {
    pub params: Bound,
    pub total: Var,
    pub translation: Option<Var>,
    pub visual: Option<Var>,
}

/// Builds the objective for `batch`. The visual term is present only for
/// multimodal models on batches that carry image features.
pub fn batch_loss(model: &Seq2Seq, tape: &mut Tape, store: &ParamStore, batch: &Batch, config: &TrainConfig, task: Task, mode: &mut Mode) -> Result<BatchLoss> {
    let p = store.bind(tape);
    let enc = model.encode(tape, &p, batch, mode)?;
    let loss = &config.loss;

    let translation = if task == Task::Visual {
        None
    } else {
        let tf = model.teacher_forced(tape, &p, batch, &enc, mode)?;
        let stacked = tape.concat(&tf.outputs, 0)?;
        let gold: Vec<usize> = tf.gold.concat();
        let mask: Vec<bool> = tf.mask.concat();
        Some(match model.config().output_head {
            OutputHead::EmbeddingPrediction => {
                let values = tape.value(stacked);
                let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] && has_direction(values.row(i))).collect();
                let preds = tape.embedding_lookup(stacked, &rows)?;
                let gold: Vec<usize> = rows.iter().map(|&i| gold[i]).collect();
                let table = model.target_table_var(&p);
                let kind = model.config().distance;
                margin_ranking_loss(tape, preds, table, &gold, loss.gamma, kind, loss.negative, batch.size())?.0
            }
            OutputHead::Softmax => cross_entropy_loss(tape, stacked, &gold, &mask)?,
        })
    };

    let visual = match (task, model.config().multimodal, batch.visual()) {
        (Task::Translation, _, _) | (_, false, _) | (_, _, None) => None,
        (_, true, Some(images)) => {
            let mut projected = model.project_visual(tape, &p, &enc)?;
            let mut images = tape.constant(images.clone());
            let values = tape.value(projected);
            let rows: Vec<usize> = (0..values.shape()[0]).filter(|&i| has_direction(values.row(i))).collect();
            if rows.len() < values.shape()[0] {
                projected = tape.embedding_lookup(projected, &rows)?;
                images = tape.embedding_lookup(images, &rows)?;
            }
            Some(visual_max_margin(tape, projected, images, loss.alpha, model.config().distance)?)
        }
    };

    let total = match (translation, visual) {
        (Some(t), v) => multitask_loss(tape, t, v, loss.lambda)?,
        (None, Some(v)) => v,
        (None, None) => return Err(Error::contract("visual-only step on a batch without images")),
    };
    Ok(BatchLoss {
        params: p,
        total,
        translation,
        visual,
    })
}

/// Owns a model, its optimizer and the dropout stream.
pub struct Trainer {
    model: Seq2Seq,
    config: TrainConfig,
    optimizer: Adam,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Seq2Seq, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: Adam::new(config.optimizer),
            dropout_rng: seeded_rng(config.seed, Stream::Dropout),
            model,
            config,
        })
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }

    pub fn into_model(self) -> Seq2Seq {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Forward, backward, clip and one Adam update on `batch`.
    pub fn step(&mut self, batch: &Batch, task: Task) -> Result<StepStats> {
        let mut tape = Tape::new();
        let mut mode = Mode::train(&mut self.dropout_rng as &mut dyn RngCore);
        let terms = batch_loss(&self.model, &mut tape, self.model.store(), batch, &self.config, task, &mut mode)?;
        let loss = tape.value(terms.total).item();
        if !loss.is_finite() {
            return Err(Error::contract(format!("non-finite training loss {loss}")));
        }
        let grads = tape.backward(terms.total)?;
        let store = self.model.store_mut();
        store.zero_grad();
        store.accumulate_grads(&terms.params, &grads);
        let grad_norm = store.grad_norm();
        clip_grad_norm(store, self.config.clip_norm);
        let clipped_norm = store.grad_norm();
        self.optimizer.step(store)?;
        Ok(StepStats {
            loss,
            translation: terms.translation.map(|v| tape.value(v).item()),
            visual: terms.visual.map(|v| tape.value(v).item()),
            grad_norm,
            clipped_norm,
        })
    }
}

/// Corpus BLEU of greedy translations of `corpus`.
pub fn evaluate_bleu(model: &Seq2Seq, corpus: &ParallelCorpus, max_len: usize, batch_size: usize) -> Result<f64> {
    let hyps = model.translate_sentences(corpus.source(), max_len, batch_size)?;
    corpus_bleu(&hyps, corpus.target())
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains `model` on `train`, validating on `val` when it is non-empty.
///
/// `features` must already be debiased as the run requires. The returned
/// model holds the parameters of the best validation epoch (or the last
/// epoch when validation never ran).
pub fn train(
    model: Seq2Seq,
    config: &TrainConfig,
    train: &ParallelCorpus,
    val: &ParallelCorpus,
    features: Option<&VisualFeatureSet>,
) -> Result<(Seq2Seq, TrainLog)> {
    config.validate()?;
    let mc = model.config().clone();
    if mc.multimodal {
        let f = features.ok_or_else(|| Error::config("multimodal training needs visual features"))?;
        if f.dim() != mc.latent_dim {
            return Err(Error::config(format!(
                "visual features have dimension {}, model latent_dim is {}",
                f.dim(),
                mc.latent_dim
            )));
        }
        if train.images().is_none() {
            return Err(Error::config("multimodal training needs an image index for the training corpus"));
        }
    }
    if train.is_empty() {
        return Err(Error::config("empty training corpus"));
    }
    let hash = config_hash(&HashedConfig { model: &mc, train: config })?;
    let features = if mc.multimodal { features } else { None };

    let mut shuffle = seeded_rng(config.seed, Stream::Shuffle);
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut log = TrainLog::default();
    let mut best: Option<ParamStore> = None;
    let mut since_best = 0usize;
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        let batches = make_batches(
            train,
            trainer.model.src_vocab(),
            trainer.model.tgt_vocab(),
            features,
            config.batch_size,
            Some(shuffle.next_u64()),
        )?;
        let (mut total, mut trans, mut vis, mut max_norm) = (Vec::new(), Vec::new(), Vec::new(), 0.0f64);
        for (i, batch) in batches.iter().enumerate() {
            let task = match config.schedule {
                Schedule::Joint => Task::Joint,
                Schedule::Alternating if i % 2 == 1 && batch.visual().is_some() && mc.multimodal => Task::Visual,
                Schedule::Alternating => Task::Translation,
            };
            let s = trainer.step(batch, task)?;
            total.push(s.loss);
            trans.extend(s.translation);
            vis.extend(s.visual);
            max_norm = max_norm.max(s.grad_norm);
        }

        let validate = config.validation_interval > 0 && epoch % config.validation_interval == 0 && !val.is_empty();
        let val_bleu = if validate {
            Some(evaluate_bleu(&trainer.model, val, config.max_decode_len, config.batch_size)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss: mean(&total).unwrap_or(0.0),
            loss_translation: mean(&trans).unwrap_or(0.0),
            loss_visual: mean(&vis),
            val_bleu,
            max_grad_norm: max_norm,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            seed: config.seed,
            config_hash: hash.clone(),
        };
        ::log::info!(
            "epoch {epoch}: loss {:.4} (translation {:.4}) val BLEU {}",
            record.loss,
            record.loss_translation,
            val_bleu.map_or("-".into(), |b| format!("{b:.2}"))
        );
        log.records.push(record);

        if let Some(b) = val_bleu {
            if log.best_val_bleu.is_none_or(|best| b > best) {
                log.best_val_bleu = Some(b);
                log.best_epoch = Some(epoch);
                best = Some(trainer.model.store().clone());
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience > 0 && since_best >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }

    let mut model = trainer.into_model();
    if let Some(store) = best {
        model.set_store(store)?;
    }
    Ok((model, log))
}
