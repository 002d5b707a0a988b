use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{run_experiment, ExperimentData};
use crate::embeddings::InitMode;
use crate::error::{Error, Result};

/// One configuration of the ablation tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub encoder_init: InitMode,
    pub decoder_init: InitMode,
    pub decoder_fixed: bool,
    pub images: bool,
    pub visual_debias: bool,
}

impl AblationRow {
    fn new(name: &str, encoder_init: InitMode, decoder_init: InitMode, decoder_fixed: bool, images: bool, visual_debias: bool) -> Self {
        AblationRow {
            name: name.into(),
            encoder_init,
            decoder_init,
            decoder_fixed,
            images,
            visual_debias,
        }
    }

    /// `base` with this row's flags.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.model.encoder_init = self.encoder_init;
        c.model.decoder_init = self.decoder_init;
        c.model.decoder_fixed = self.decoder_fixed;
        c.model.multimodal = self.images;
        c.visual_debias = self.visual_debias;
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMatrix {
    /// Encoder/decoder initialization and decoder fine-tuning.
    Initialization,
    /// Visual feature ablations.
    Visual,
}

impl std::str::FromStr for AblationMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(AblationMatrix::Initialization),
            "visual" => Ok(AblationMatrix::Visual),
            other => Err(Error::config(format!("unknown ablation matrix {other:?} (expected init or visual)"))),
        }
    }
}

impl AblationMatrix {
    pub fn rows(self) -> Vec<AblationRow> {
        use InitMode::{Pretrained as P, Random as R};
        match self {
            AblationMatrix::Initialization => vec![
                AblationRow::new("pretrained/pretrained/fixed", P, P, true, true, true),
                AblationRow::new("random/pretrained/fixed", R, P, true, true, true),
                AblationRow::new("pretrained/random/tuned", P, R, false, true, true),
                AblationRow::new("random/random/tuned", R, R, false, true, true),
                AblationRow::new("pretrained/pretrained/tuned", P, P, false, true, true),
                AblationRow::new("random/pretrained/tuned", R, P, false, true, true),
            ],
            AblationMatrix::Visual => vec![
                AblationRow::new("ours", P, P, true, true, true),
                AblationRow::new("-debias", P, P, true, true, false),
                AblationRow::new("-images", P, P, true, false, false),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub val_bleu: f64,
    pub test_bleu: f64,
}

/// Trains and scores every row on the same data and seed.
pub fn run_ablation_matrix(base: &ExperimentConfig, data: &ExperimentData, rows: &[AblationRow]) -> Result<Vec<AblationResult>> {
    rows.iter()
        .map(|row| {
            ::log::info!("ablation row {}", row.name);
            let outcome = run_experiment(&row.apply(base), data)?;
            Ok(AblationResult {
                row: row.clone(),
                val_bleu: outcome.val_bleu,
                test_bleu: outcome.test_bleu,
            })
        })
        .collect()
}

fn init_name(m: InitMode) -> &'static str {
    match m {
        InitMode::Pretrained => "pretrained",
        InitMode::Random => "random",
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub const ABLATION_CSV_HEADER: [&str; 8] = ["name", "encoder", "decoder", "fixed", "images", "debias", "val_bleu", "test_bleu"];

pub fn ablation_csv(results: &[AblationResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(ABLATION_CSV_HEADER).map_err(err)?;
    for r in results {
        let row = &r.row;
        w.write_record([
            row.name.as_str(),
            init_name(row.encoder_init),
            init_name(row.decoder_init),
            yes_no(row.decoder_fixed),
            yes_no(row.images),
            yes_no(row.visual_debias),
            &format!("{:.2}", r.val_bleu),
            &format!("{:.2}", r.test_bleu),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
