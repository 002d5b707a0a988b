mod batch;
mod corpus;
mod synth;
mod text;
mod visual;

pub use batch::{make_batches, Batch, DEFAULT_BATCH_SIZE, MAX_SENTENCE_LEN};
pub use corpus::{load_image_index, load_parallel_text, load_text, save_parallel_text, ParallelCorpus, Split};
pub use synth::{generate_synthetic_task, source_word, target_word, SyntheticSpec, SyntheticTask};
pub use text::{normalize, preprocess_text};
pub use visual::{
    debias_visual, load_visual_features, read_mmvf, save_visual_features, write_mmvf, VisualFeatureSet,
    DEFAULT_FEATURE_DIM,
};

use crate::embeddings::Vocabulary;

/// Vocabulary over a tokenized side of the training corpus.
pub fn build_vocab(sentences: &[Vec<String>], max_size: usize) -> Vocabulary {
    Vocabulary::build(sentences.iter().map(Vec::as_slice), max_size)
}
