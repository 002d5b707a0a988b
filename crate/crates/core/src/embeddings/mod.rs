//! Pretrained word embeddings: loading, table assembly, all-but-the-top
//! postprocessing, the distance `d`, and nearest-neighbor search.

mod debias;
pub mod distance;
mod search;
mod table;
mod vectors;
mod vocab;

pub use debias::{debias_all_but_top, DebiasReport, DEFAULT_TOP_K};
pub use distance::{cosine_distance, DistanceKind};
pub use search::{nearest_neighbor, NeighborIndex};
pub use table::{assemble_table, build_unknown_embedding, pretrained_table, EmbeddingTable, InitMode, RANDOM_INIT_RANGE};
pub use vectors::{load_word_vectors, parse_word_vectors, save_word_vectors, write_word_vectors, WordVectors, DEFAULT_EMBEDDING_DIM};
pub use vocab::{
    Vocabulary, BOS, BOS_TOKEN, DEFAULT_VOCAB_SIZE, EOS, EOS_TOKEN, NUM_RESERVED, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};
