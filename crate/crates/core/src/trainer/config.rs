use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, DEFAULT_CLIP_NORM};
use crate::data::{DEFAULT_BATCH_SIZE, MAX_SENTENCE_LEN};
use crate::error::{Error, Result};
use crate::losses::LossConfig;

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_PATIENCE: usize = 10;

/// How the two tasks share batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Both losses on every batch.
    #[default]
    Joint,
    /// Even batches train translation only, odd batches the visual task only.
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub clip_norm: f64,
    pub loss: LossConfig,
    pub schedule: Schedule,
    /// Epochs between validation runs; 0 disables validation.
    pub validation_interval: usize,
    /// Validation runs without improvement before stopping; 0 never stops.
    pub patience: usize,
    /// Decoding cap used for validation BLEU.
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 1,
            optimizer: AdamConfig::default(),
            clip_norm: DEFAULT_CLIP_NORM,
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            validation_interval: 1,
            patience: DEFAULT_PATIENCE,
            max_decode_len: MAX_SENTENCE_LEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::config("invalid optimizer settings"));
        }
        self.loss.validate()
    }
}

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Data = 3,
}

pub fn seeded_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
