//! Corpus BLEU, sentence-presence word F-scores and frequency-bucketed
//! reports.

mod bleu;
mod fscore;
mod report;

pub use bleu::{corpus_bleu, BleuStats, MAX_ORDER};
pub use fscore::{fscore_by_frequency, word_fscore, FrequencyBucket, WordScore, DEFAULT_BUCKET_EDGES};
pub use report::{format_mean_sd, mean_sd, token_frequencies, EvaluationReport, WordRecord};
