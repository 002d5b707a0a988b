//! Multimodal machine translation that decodes by predicting target word
//! embeddings, trained jointly with an image-grounding objective.

pub mod autodiff;
pub mod data;
pub mod embeddings;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod trainer;
mod canonical;
mod error;

pub use autodiff::{ParamStore, Tape, Tensor, Var};
pub use canonical::{canonical_json, config_hash};
pub use data::{Batch, ParallelCorpus, VisualFeatureSet};
pub use embeddings::{DistanceKind, Vocabulary};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentData, RunOutcome};
pub use model::{ModelConfig, Seq2Seq};
pub use trainer::{TrainConfig, TrainLog};
