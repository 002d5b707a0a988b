//! End-to-end runs: configuration, data preparation, training, evaluation,
//! ablation matrices and multi-seed summaries.

mod ablation;
mod config;
mod pipeline;

pub use ablation::{ablation_csv, run_ablation_matrix, AblationMatrix, AblationResult, AblationRow, ABLATION_CSV_HEADER};
pub use config::{DataConfig, EmbeddingConfig, ExperimentConfig, FileData, SplitPaths};
pub use pipeline::{build_model, prepare_features, run_experiment, run_seeds, write_outcome, ExperimentData, RunOutcome};
