use std::path::Path;

use serde::Serialize;

use super::config::{DataConfig, ExperimentConfig};
use crate::data::{
    build_vocab, generate_synthetic_task, load_parallel_text, load_visual_features, ParallelCorpus,
    Split, VisualFeatureSet,
};
use crate::embeddings::{
    assemble_table, load_word_vectors, pretrained_table, EmbeddingTable, InitMode, Vocabulary, WordVectors,
};
use crate::error::{Error, Result};
use crate::evaluation::{token_frequencies, EvaluationReport, DEFAULT_BUCKET_EDGES};
use crate::model::{save_checkpoint, Seq2Seq};
use crate::trainer::{evaluate_bleu, seeded_rng, train, Stream, TrainLog};

/// Corpora, raw features and raw word vectors for a run.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: ParallelCorpus,
    pub val: ParallelCorpus,
    pub test: ParallelCorpus,
    /// Features before any centroid subtraction.
    pub features: Option<VisualFeatureSet>,
    pub source_vectors: Option<WordVectors>,
    pub target_vectors: Option<WordVectors>,
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let dim = Some(config.model.embedding_dim);
        let vectors = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| load_word_vectors(p, dim)).transpose();
        match &config.data {
            DataConfig::Synthetic(spec) => {
                let task = generate_synthetic_task(spec)?;
                let given = (vectors(&config.embeddings.source_vectors)?, vectors(&config.embeddings.target_vectors)?);
                Ok(ExperimentData {
                    train: task.train,
                    val: task.val,
                    test: task.test,
                    features: Some(task.features),
                    source_vectors: Some(given.0.unwrap_or(task.source_vectors)),
                    target_vectors: Some(given.1.unwrap_or(task.target_vectors)),
                })
            }
            DataConfig::Files(f) => {
                let load = |s: &super::config::SplitPaths, split| {
                    load_parallel_text(&s.source, &s.target, s.images.as_deref(), split)
                };
                Ok(ExperimentData {
                    train: load(&f.train, Split::Train)?,
                    val: load(&f.val, Split::Val)?,
                    test: load(&f.test, Split::Test)?,
                    features: f.features.as_ref().map(load_visual_features).transpose()?,
                    source_vectors: vectors(&config.embeddings.source_vectors)?,
                    target_vectors: vectors(&config.embeddings.target_vectors)?,
                })
            }
        }
    }
}

/// Features as the run uses them: centroid-debiased over the training
/// images when `visual_debias` is set, untouched otherwise.
pub fn prepare_features(config: &ExperimentConfig, data: &ExperimentData) -> Result<Option<VisualFeatureSet>> {
    if !config.model.multimodal {
        return Ok(None);
    }
    let features = data
        .features
        .as_ref()
        .ok_or_else(|| Error::config("multimodal model configured but no visual features given"))?;
    if !config.visual_debias {
        return Ok(Some(features.clone()));
    }
    let train_images = data
        .train
        .images()
        .ok_or_else(|| Error::config("visual debiasing needs an image index for the training corpus"))?;
    Ok(Some(features.debias(train_images)?))
}

fn embedding_table(
    config: &ExperimentConfig,
    vectors: Option<&WordVectors>,
    vocab: &Vocabulary,
    mode: InitMode,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<EmbeddingTable> {
    let dim = config.model.embedding_dim;
    match mode {
        InitMode::Random => assemble_table(None, vocab, None, mode, dim, rng),
        InitMode::Pretrained => {
            let raw = vectors.ok_or_else(|| Error::config("pretrained initialization needs word vectors"))?;
            if raw.dim() != dim {
                return Err(Error::config(format!("word vectors have dimension {}, model expects {dim}", raw.dim())));
            }
            let top_k = config.embeddings.debias.then_some(config.embeddings.top_k);
            Ok(pretrained_table(raw, vocab, top_k)?.0)
        }
    }
}

/// Vocabularies, embedding tables and a freshly initialized model.
pub fn build_model(config: &ExperimentConfig, data: &ExperimentData) -> Result<Seq2Seq> {
    config.validate()?;
    let mc = &config.model;
    let src_vocab = build_vocab(data.train.source(), mc.vocab_size);
    let tgt_vocab = build_vocab(data.train.target(), mc.vocab_size);
    let mut rng = seeded_rng(config.train.seed, Stream::Init);
    let src = embedding_table(config, data.source_vectors.as_ref(), &src_vocab, mc.encoder_init, &mut rng)?;
    let tgt = embedding_table(config, data.target_vectors.as_ref(), &tgt_vocab, mc.decoder_init, &mut rng)?;
    Seq2Seq::new(mc.clone(), src_vocab, tgt_vocab, src, tgt, &mut rng)
}

pub struct RunOutcome {
    pub model: Seq2Seq,
    pub log: TrainLog,
    /// Features the run trained on, if any.
    pub features: Option<VisualFeatureSet>,
    pub val_bleu: f64,
    pub test_bleu: f64,
    pub test_hypotheses: Vec<Vec<String>>,
    pub report: EvaluationReport,
}

/// Builds, trains and evaluates one configuration.
pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData) -> Result<RunOutcome> {
    let features = prepare_features(config, data)?;
    let model = build_model(config, data)?;
    let (model, log) = train(model, &config.train, &data.train, &data.val, features.as_ref())?;
    let (max_len, bs) = (config.train.max_decode_len, config.train.batch_size);
    let val_bleu = if data.val.is_empty() {
        0.0
    } else {
        evaluate_bleu(&model, &data.val, max_len, bs)?
    };
    let test_hypotheses = model.translate_sentences(data.test.source(), max_len, bs)?;
    let freq = token_frequencies(data.train.target());
    let report = EvaluationReport::build(&test_hypotheses, data.test.target(), &freq, &DEFAULT_BUCKET_EDGES)?;
    Ok(RunOutcome {
        test_bleu: report.bleu,
        model,
        log,
        features,
        val_bleu,
        test_hypotheses,
        report,
    })
}

#[derive(Serialize)]
struct Scores {
    val_bleu: f64,
    test_bleu: f64,
    best_epoch: Option<usize>,
}

/// Writes the resolved config, training log, checkpoint, test translations
/// and evaluation report into `dir`.
pub fn write_outcome(config: &ExperimentConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), config.to_json()?)?;
    outcome.log.save(dir.join("train_log.jsonl"))?;
    save_checkpoint(&outcome.model, dir.join("model.mmck"))?;
    let lines: String = outcome.test_hypotheses.iter().map(|h| h.join(" ") + "\n").collect();
    std::fs::write(dir.join("test_hypotheses.txt"), lines)?;
    outcome.report.write(dir.join("test_report"))?;
    let scores = Scores {
        val_bleu: outcome.val_bleu,
        test_bleu: outcome.test_bleu,
        best_epoch: outcome.log.best_epoch,
    };
    std::fs::write(dir.join("scores.json"), serde_json::to_string_pretty(&scores)? + "\n")?;
    Ok(())
}

/// Test BLEU of the same configuration under each seed.
pub fn run_seeds(config: &ExperimentConfig, data: &ExperimentData, seeds: &[u64]) -> Result<Vec<RunOutcome>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.train.seed = seed;
            run_experiment(&c, data)
        })
        .collect()
}

