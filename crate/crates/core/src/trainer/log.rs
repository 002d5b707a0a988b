use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the training objective over the epoch's batches.
    pub loss: f64,
    /// Mean translation loss (margin ranking, or cross-entropy for the softmax head).
    pub loss_translation: f64,
    /// Mean visual loss over batches that carried images.
    pub loss_visual: Option<f64>,
    pub val_bleu: Option<f64>,
    /// Largest pre-clip gradient norm seen in the epoch.
    pub max_grad_norm: f64,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_bleu: Option<f64>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TrainLog {
        let mut log = self.clone();
        for r in &mut log.records {
            r.wall_clock_secs = 0.0;
        }
        log
    }

    /// One JSON object per epoch.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Reads epoch records back; summary fields are recomputed from them.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EpochRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(b) = rec.val_bleu {
                if log.best_val_bleu.is_none_or(|best| b > best) {
                    log.best_val_bleu = Some(b);
                    log.best_epoch = Some(rec.epoch);
                }
            }
            log.records.push(rec);
        }
        Ok(log)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainLog> {
        Self::read_jsonl(BufReader::new(std::fs::File::open(path)?))
    }
}
