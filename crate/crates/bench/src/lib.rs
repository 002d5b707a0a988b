//! Fixtures shared by the benchmarks.

use mmt_core::data::{make_batches, Batch, SyntheticSpec};
use mmt_core::experiment::{build_model, ExperimentConfig, ExperimentData};
use mmt_core::{Seq2Seq, TrainConfig, VisualFeatureSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> mmt_core::Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mmt_core::Tensor::uniform(&[rows, cols], -1.0, 1.0, &mut rng)
}

pub fn random_corpus(sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|_| {
            let len = rng.random_range(5..20);
            (0..len).map(|_| format!("w{}", rng.random_range(0..200))).collect()
        })
        .collect()
}

/// Synthetic-task model plus one training batch.
pub struct TrainFixture {
    pub model: Seq2Seq,
    pub train: TrainConfig,
    pub batch: Batch,
}

pub fn train_fixture(batch_size: usize) -> TrainFixture {
    let mut config = ExperimentConfig::synthetic(SyntheticSpec::default());
    config.model.vocab_size = 60;
    config.model.embedding_dim = 32;
    config.model.latent_dim = 32;
    config.model.encoder_hidden = 32;
    config.model.decoder_hidden = 32;
    config.train.batch_size = batch_size;
    let data = ExperimentData::load(&config).unwrap();
    let model = build_model(&config, &data).unwrap();
    let features: Option<&VisualFeatureSet> = data.features.as_ref();
    let batch = make_batches(&data.train, model.src_vocab(), model.tgt_vocab(), features, batch_size, None)
        .unwrap()
        .remove(0);
    TrainFixture { model, train: config.train, batch }
}
